#include "starksim/io.hpp"

#include <charconv>
#include <chrono>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace starksim {

namespace {

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::string& header) : path_(path) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw IoError(fmt::format("cannot write {}", path.string()));
        out_ << header << '\n';
    }
    void row(const std::string& line) { out_ << line << '\n'; }
    ~CsvWriter() = default;
    void close() {
        out_.close();
        if (!out_) throw IoError(fmt::format("error writing {}", path_.string()));
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

// Rows of a CSV file after checking the header and the column count.
std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path, const std::string& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read {}", path.string()));
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw IoError(fmt::format("{}: expected header '{}'", path.string(), header));
    const std::size_t columns = split(header).size();
    std::vector<std::vector<std::string>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != columns)
            throw IoError(fmt::format("{}:{}: expected {} columns, found {}", path.string(), line_no, columns, cells.size()));
        rows.push_back(std::move(cells));
    }
    return rows;
}

double to_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw IoError(fmt::format("not a number: '{}'", s));
    return v;
}

template <typename Int>
Int to_int(const std::string& s) {
    Int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw IoError(fmt::format("not an integer: '{}'", s));
    return v;
}

} // namespace

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void write_ple_csv(const std::filesystem::path& path, const ScanResult& scan) {
    CsvWriter w(path, "frequency_offset_mhz,counts,integration_s");
    for (const auto& p : scan.points)
        w.row(fmt::format("{},{},{}", format_double(p.frequency_offset_mhz), p.counts, format_double(p.integration_s)));
    w.close();
}

ScanResult read_ple_csv(const std::filesystem::path& path) {
    ScanResult out;
    for (const auto& r : read_rows(path, "frequency_offset_mhz,counts,integration_s"))
        out.points.push_back({to_double(r[0]), to_int<std::uint64_t>(r[1]), to_double(r[2])});
    return out;
}

void write_decay_csv(const std::filesystem::path& path, const TimeHistogram& histogram) {
    CsvWriter w(path, "time_us,counts");
    for (std::size_t i = 0; i < histogram.counts.size(); ++i)
        w.row(fmt::format("{},{}", format_double(histogram.bin_center(i)), histogram.counts[i]));
    w.close();
}

TimeHistogram read_decay_csv(const std::filesystem::path& path) {
    TimeHistogram h;
    const auto rows = read_rows(path, "time_us,counts");
    if (rows.empty()) throw IoError(fmt::format("{}: no bins", path.string()));
    // Bin centres sit at (i + 1/2) * width.
    h.bin_width_us = 2.0 * to_double(rows[0][0]);
    for (const auto& r : rows) h.counts.push_back(to_int<std::uint64_t>(r[1]));
    return h;
}

void write_g2_csv(const std::filesystem::path& path, const LagHistogram& histogram) {
    double side = 0.0;
    for (int k = -histogram.max_lag; k <= histogram.max_lag; ++k)
        if (k != 0) side += static_cast<double>(histogram.at(k));
    const double mean = side / (2.0 * histogram.max_lag);
    CsvWriter w(path, "lag_pulses,coincidences,normalized");
    for (int k = -histogram.max_lag; k <= histogram.max_lag; ++k) {
        const double c = static_cast<double>(histogram.at(k));
        w.row(fmt::format("{},{},{}", k, histogram.at(k), format_double(mean > 0 ? c / mean : 0.0)));
    }
    w.close();
}

LagHistogram read_g2_csv(const std::filesystem::path& path) {
    const auto rows = read_rows(path, "lag_pulses,coincidences,normalized");
    if (rows.size() < 3 || rows.size() % 2 == 0) throw IoError(fmt::format("{}: malformed lag histogram", path.string()));
    LagHistogram h;
    h.max_lag = static_cast<int>(rows.size() / 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (to_int<int>(rows[i][0]) != static_cast<int>(i) - h.max_lag)
            throw IoError(fmt::format("{}: lags must run contiguously from -{}", path.string(), h.max_lag));
        h.coincidences.push_back(to_int<std::uint64_t>(rows[i][1]));
    }
    return h;
}

void write_stark_csv(const std::filesystem::path& path, const std::vector<StarkScanRow>& rows) {
    CsvWriter w(path, "voltage_v,field_v_per_cm,peak_mhz,peak_err_mhz,fwhm_mhz,fwhm_err_mhz");
    for (const auto& r : rows)
        w.row(fmt::format("{},{},{},{},{},{}", format_double(r.voltage_v), format_double(r.field_v_per_cm),
                          format_double(r.peak_mhz), format_double(r.peak_err_mhz), format_double(r.fwhm_mhz),
                          format_double(r.fwhm_err_mhz)));
    w.close();
}

std::vector<StarkScanRow> read_stark_csv(const std::filesystem::path& path) {
    std::vector<StarkScanRow> out;
    for (const auto& r : read_rows(path, "voltage_v,field_v_per_cm,peak_mhz,peak_err_mhz,fwhm_mhz,fwhm_err_mhz"))
        out.push_back({to_double(r[0]), to_double(r[1]), to_double(r[2]), to_double(r[3]), to_double(r[4]),
                       to_double(r[5])});
    return out;
}

void write_fit_report(const std::filesystem::path& path, const std::vector<FitReportRow>& rows) {
    CsvWriter w(path, "quantity,value,stderr,units");
    for (const auto& r : rows)
        w.row(fmt::format("{},{},{},{}", r.quantity, format_double(r.value), format_double(r.stderr_value), r.units));
    w.close();
}

std::vector<FitReportRow> read_fit_report(const std::filesystem::path& path) {
    std::vector<FitReportRow> out;
    for (const auto& r : read_rows(path, "quantity,value,stderr,units"))
        out.push_back({r[0], to_double(r[1]), to_double(r[2]), r[3]});
    return out;
}

void write_grid_csv(const std::filesystem::path& path, const PotentialGrid& grid) {
    CsvWriter w(path, "x_um,y_um,potential_v");
    for (std::size_t j = 0; j < grid.ny(); ++j)
        for (std::size_t i = 0; i < grid.nx(); ++i)
            w.row(fmt::format("{},{},{}", format_double(grid.x_of(i)), format_double(grid.y_of(j)),
                              format_double(grid(i, j))));
    w.close();
}

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest, const std::string& config_text) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j;
    j["master_seed"] = manifest.master_seed;
    j["config_digest"] = manifest.config_digest;
    j["artifact_version"] = manifest.artifact_version;
    j["command"] = manifest.command;
    j["timestamp_utc"] = manifest.timestamp_utc;
    j["config_file"] = "config.toml";
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
        out << j.dump(2) << '\n';
        if (!out) throw IoError(fmt::format("cannot write {}", (dir / "manifest.json").string()));
    }
    std::ofstream cfg(dir / "config.toml", std::ios::binary | std::ios::trunc);
    cfg << config_text;
    if (!cfg) throw IoError(fmt::format("cannot write {}", (dir / "config.toml").string()));
}

RunManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read {}", (dir / "manifest.json").string()));
    try {
        const auto j = nlohmann::json::parse(in);
        RunManifest m;
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.config_digest = j.at("config_digest").get<std::string>();
        m.artifact_version = j.at("artifact_version").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.timestamp_utc = j.at("timestamp_utc").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("malformed manifest: {}", e.what()));
    }
}

std::string utc_timestamp() {
    const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace starksim
