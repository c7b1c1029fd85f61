#include "starksim/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <openssl/evp.h>
#include <optional>
#include <set>
#include <sstream>
#include <variant>

namespace starksim {

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : ValidationError(line > 0 ? fmt::format("{}:{}: {}", source, line, message) : fmt::format("{}: {}", source, message)),
      line_(line) {}

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t slots are bound as 64-bit integers");

using Slot = std::variant<double*, std::uint64_t*, int*, bool*, std::string*, std::vector<double>*,
                          std::vector<std::string>*, BoundaryCondition*, std::optional<double>*>;

struct Key {
    const char* name;
    Slot slot;
};

struct Section {
    const char* name;
    std::vector<Key> keys;
    // Component validation, run after the section is bound.
    std::function<void()> check;
};

std::vector<Section> sections_of(ExperimentConfig& c) {
    auto& l = c.layout;
    auto& s = c.solver;
    auto& p = c.protocol;
    return {
        {"layout",
         {{"electrode_width_um", &l.electrode_width_um},
          {"gap_um", &l.gap_um},
          {"left_potential_v", &l.electrode_potentials_v.first},
          {"right_potential_v", &l.electrode_potentials_v.second},
          {"domain_width_um", &l.domain_width_um},
          {"domain_height_um", &l.domain_height_um},
          {"probe_x_um", &l.probe.x_um},
          {"probe_y_um", &l.probe.y_um}},
         [&] { l.validate(); }},
        {"solver",
         {{"grid_spacing_um", &s.grid_spacing_um},
          {"tolerance_v", &s.options.tolerance_v},
          {"relaxation_factor", &s.options.relaxation_factor},
          {"max_iterations", &s.options.max_iterations},
          {"boundary", &s.options.boundary},
          {"mesh_grading", &s.mesh_grading}},
         [&] {
             if (!(s.grid_spacing_um > 0.0)) throw ValidationError("grid spacing must be positive");
             if (!(s.options.tolerance_v > 0.0)) throw ValidationError("tolerance must be positive");
             if (!(s.options.relaxation_factor == 0.0 ||
                   (s.options.relaxation_factor > 0.0 && s.options.relaxation_factor < 2.0)))
                 throw ValidationError("relaxation factor must be 0 (automatic) or lie in (0, 2)");
         }},
        {"dielectric",
         {{"permittivity_above", &c.dielectric.relative_permittivity_above},
          {"permittivity_below", &c.dielectric.relative_permittivity_below}},
         [&] { c.dielectric.validate(); }},
        {"cavity",
         {{"center_frequency_ghz", &c.cavity.center_frequency_ghz},
          {"quality_factor", &c.cavity.quality_factor},
          {"mode_volume_cubic_wavelengths", &c.cavity.mode_volume},
          {"refractive_index", &c.cavity.refractive_index},
          {"dip_depth", &c.cavity.dip_depth}},
         [&] { c.cavity.validate(); }},
        {"emitter",
         {{"bulk_lifetime_ms", &c.emitter.params.bulk_lifetime_ms},
          {"branching_ratio", &c.emitter.params.branching_ratio},
          {"enhancement_factor", &c.emitter.params.enhancement_factor},
          {"saturation_excitation_prob", &c.emitter.saturation_excitation_prob}},
         [&] {
             c.emitter.params.validate();
             const double q = c.emitter.saturation_excitation_prob;
             if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("saturation excitation probability must lie in [0, 1]");
         }},
        {"protocol",
         {{"pulse_length_us", &p.pulse_length_us},
          {"repetition_rate_khz", &p.repetition_rate_khz},
          {"window_delay_us", &p.window_delay_us},
          {"window_length_us", &p.window_length_us},
          {"integration_time_s", &p.integration_time_s},
          {"scan_pitch_mhz", &p.scan_pitch_mhz},
          {"scan_min_mhz", &p.scan_min_mhz},
          {"scan_max_mhz", &p.scan_max_mhz}},
         [&] { p.validate(); }},
        {"detector",
         {{"total_efficiency", &c.detector.total_efficiency}, {"dark_rate_hz", &c.detector.dark_rate_hz}},
         [&] { c.detector.validate(); }},
        {"stark",
         {{"ion", &c.stark.ion},
          {"voltages_v", &c.stark.voltages_v},
          {"max_voltage_v", &c.stark.max_voltage_v},
          {"half_range_mhz", &c.stark.half_range_mhz}},
         [&] {
             if (!(c.stark.max_voltage_v > 0.0)) throw ValidationError("max voltage must be positive");
             if (!(c.stark.half_range_mhz > 0.0)) throw ValidationError("half range must be positive");
             for (double v : c.stark.voltages_v)
                 if (!(std::abs(v) <= c.stark.max_voltage_v))
                     throw ValidationError(fmt::format("voltage {} V exceeds the {} V limit", v, c.stark.max_voltage_v));
         }},
        {"decay",
         {{"n_pulses", &c.decay.n_pulses}, {"bin_width_us", &c.decay.bin_width_us}, {"fit_start_us", &c.decay.fit_start_us}},
         [&] {
             if (c.decay.n_pulses == 0) throw ValidationError("number of pulses must be positive");
             if (!(c.decay.bin_width_us > 0.0)) throw ValidationError("bin width must be positive");
         }},
        {"g2",
         {{"n_pulses", &c.g2.n_pulses},
          {"background_fraction", &c.g2.background_fraction},
          {"max_lag", &c.g2.max_lag}},
         [&] {
             if (c.g2.n_pulses == 0) throw ValidationError("number of pulses must be positive");
             if (!(c.g2.background_fraction >= 0.0 && c.g2.background_fraction < 1.0))
                 throw ValidationError("background fraction must lie in [0, 1)");
             if (c.g2.max_lag < 3) throw ValidationError("max lag must be at least 3");
         }},
        {"fig2",
         {{"threshold_sigma", &c.fig2.threshold_sigma},
          {"fit_half_width_mhz", &c.fig2.fit_half_width_mhz},
          {"voltage_v", &c.fig2.voltage_v}},
         [&] {
             if (!(c.fig2.threshold_sigma > 0.0)) throw ValidationError("threshold must be positive");
             if (!(c.fig2.fit_half_width_mhz > 0.0)) throw ValidationError("fit half width must be positive");
         }},
        {"fig4b", {{"summary_ions", &c.fig4b.summary_ions}}, [] {}},
        {"run", {{"seed", &c.run.seed}, {"output_dir", &c.run.output_dir}}, [] {}},
    };
}

std::vector<Key> ion_keys(IonModel& ion) {
    return {{"id", &ion.id},
            {"zero_field_frequency_mhz", &ion.zero_field_frequency_mhz},
            {"stark_coefficient_khz_per_v_cm", &ion.stark_coefficient_khz_per_v_cm},
            {"zero_field_fwhm_mhz", &ion.zero_field_fwhm_mhz},
            {"broadening_mhz_per_kv_cm", &ion.broadening_mhz_per_kv_cm}};
}

// ---- lexing

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string_view strip_comment(std::string_view line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (in_string && ch == '\\') {
            ++i;
        } else if (ch == '"') {
            in_string = !in_string;
        } else if (ch == '#' && !in_string) {
            return line.substr(0, i);
        }
    }
    return line;
}

bool valid_bare_key(std::string_view k) {
    return !k.empty() && std::all_of(k.begin(), k.end(), [](char ch) {
        return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
    });
}

struct Raw {
    std::string value;
    int line = 0;
    bool used = false;
};

struct RawTable {
    std::string name;
    int line = 0;
    std::map<std::string, Raw> entries;
};

std::optional<double> parse_number(std::string_view text) {
    std::string clean;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '_') {
            if (i == 0 || i + 1 == text.size() || !std::isdigit(static_cast<unsigned char>(text[i - 1])) ||
                !std::isdigit(static_cast<unsigned char>(text[i + 1])))
                return std::nullopt;
            continue;
        }
        clean.push_back(text[i]);
    }
    std::string_view s = clean;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(s.data() + 2, s.data() + s.size(), v, 16);
        if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
        return static_cast<double>(v);
    }
    if (!s.empty() && s[0] == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<std::string> parse_string(std::string_view text) {
    if (text.size() < 2 || text.front() != '"' || text.back() != '"') return std::nullopt;
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
        char ch = text[i];
        if (ch == '"') return std::nullopt;
        if (ch == '\\') {
            if (i + 2 >= text.size()) return std::nullopt;
            switch (text[++i]) {
            case '"': ch = '"'; break;
            case '\\': ch = '\\'; break;
            case 'n': ch = '\n'; break;
            case 't': ch = '\t'; break;
            default: return std::nullopt;
            }
        }
        out.push_back(ch);
    }
    return out;
}

// Single-line array; items may not contain commas.
template <typename T, typename Parse>
std::optional<std::vector<T>> parse_array(std::string_view text, Parse parse_item) {
    if (text.size() < 2 || text.front() != '[' || text.back() != ']') return std::nullopt;
    std::vector<T> out;
    std::string_view body = trim(text.substr(1, text.size() - 2));
    if (body.empty()) return out;
    if (body.back() == ',') body = trim(body.substr(0, body.size() - 1));
    while (true) {
        const auto comma = body.find(',');
        const auto item = parse_item(trim(body.substr(0, comma)));
        if (!item) return std::nullopt;
        out.push_back(*item);
        if (comma == std::string_view::npos) break;
        body = body.substr(comma + 1);
    }
    return out;
}

struct Binder {
    const std::string& source;

    [[noreturn]] void fail(const Raw& raw, const std::string& key, const std::string& what) const {
        throw ConfigError(source, raw.line, fmt::format("'{}': {} (got `{}`)", key, what, raw.value));
    }

    double number(const Raw& raw, const std::string& key) const {
        const auto v = parse_number(raw.value);
        if (!v) fail(raw, key, "expected a finite number");
        return *v;
    }

    template <typename Int>
    Int integer(const Raw& raw, const std::string& key) const {
        std::uint64_t v = 0;
        try {
            if (!raw.value.empty() && raw.value[0] == '-') throw ValidationError("negative");
            v = parse_u64(raw.value);
        } catch (const ValidationError&) {
            fail(raw, key, "expected a non-negative integer");
        }
        if (v > static_cast<std::uint64_t>(std::numeric_limits<Int>::max())) fail(raw, key, "integer out of range");
        return static_cast<Int>(v);
    }

    void bind(const Raw& raw, const std::string& key, Slot slot) const {
        std::visit(
            [&](auto* target) {
                using T = std::remove_pointer_t<decltype(target)>;
                if constexpr (std::is_same_v<T, double>) {
                    *target = number(raw, key);
                } else if constexpr (std::is_same_v<T, std::optional<double>>) {
                    *target = number(raw, key);
                } else if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, int>) {
                    *target = integer<T>(raw, key);
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (raw.value == "true")
                        *target = true;
                    else if (raw.value == "false")
                        *target = false;
                    else
                        fail(raw, key, "expected true or false");
                } else if constexpr (std::is_same_v<T, std::string>) {
                    const auto s = parse_string(raw.value);
                    if (!s) fail(raw, key, "expected a quoted string");
                    *target = *s;
                } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                    const auto a = parse_array<double>(raw.value, parse_number);
                    if (!a) fail(raw, key, "expected an array of numbers");
                    *target = *a;
                } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                    const auto a = parse_array<std::string>(raw.value, parse_string);
                    if (!a) fail(raw, key, "expected an array of quoted strings");
                    *target = *a;
                } else if constexpr (std::is_same_v<T, BoundaryCondition>) {
                    const auto s = parse_string(raw.value);
                    if (s == "dirichlet_zero")
                        *target = BoundaryCondition::dirichlet_zero;
                    else if (s == "neumann_zero")
                        *target = BoundaryCondition::neumann_zero;
                    else
                        fail(raw, key, "expected \"dirichlet_zero\" or \"neumann_zero\"");
                }
            },
            slot);
    }

    void bind_table(RawTable& table, const std::vector<Key>& keys) const {
        for (auto& [name, raw] : table.entries) {
            const auto it = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return name == k.name; });
            if (it == keys.end()) throw ConfigError(source, raw.line, fmt::format("unknown key '{}' in [{}]", name, table.name));
            bind(raw, name, it->slot);
        }
    }
};

std::vector<RawTable> lex(std::string_view text, const std::string& source) {
    std::vector<RawTable> tables;
    std::set<std::string> seen;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string_view raw_line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const std::string_view line = trim(strip_comment(raw_line));
        if (line.empty()) continue;

        if (line.starts_with("[[")) {
            if (!line.ends_with("]]")) throw ConfigError(source, line_no, "malformed array-table header");
            const auto name = std::string(trim(line.substr(2, line.size() - 4)));
            if (name != "ions") throw ConfigError(source, line_no, fmt::format("unknown array table [[{}]]", name));
            tables.push_back({name, line_no, {}});
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(source, line_no, "malformed section header");
            const auto name = std::string(trim(line.substr(1, line.size() - 2)));
            if (!valid_bare_key(name)) throw ConfigError(source, line_no, fmt::format("invalid section name '{}'", name));
            if (name == "ions") throw ConfigError(source, line_no, "ions must be declared as [[ions]]");
            if (!seen.insert(name).second) throw ConfigError(source, line_no, fmt::format("duplicate section [{}]", name));
            tables.push_back({name, line_no, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(source, line_no, "expected `key = value`");
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (!valid_bare_key(key)) throw ConfigError(source, line_no, fmt::format("invalid key '{}'", key));
        if (value.empty()) throw ConfigError(source, line_no, fmt::format("missing value for '{}'", key));
        if (tables.empty()) throw ConfigError(source, line_no, fmt::format("key '{}' outside any section", key));
        auto [it, inserted] = tables.back().entries.emplace(key, Raw{value, line_no});
        if (!inserted) throw ConfigError(source, line_no, fmt::format("duplicate key '{}'", key));
    }
    return tables;
}

std::string format_number(double v) { return fmt::format("{}", v); }

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        switch (ch) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out.push_back(ch);
        }
    }
    return out + "\"";
}

// Empty when the key is omitted from the output.
std::string format_slot(const Slot& slot) {
    return std::visit(
        [](auto* v) -> std::string {
            using T = std::remove_pointer_t<decltype(v)>;
            if constexpr (std::is_same_v<T, double>) {
                return format_number(*v);
            } else if constexpr (std::is_same_v<T, std::optional<double>>) {
                return *v ? format_number(**v) : std::string{};
            } else if constexpr (std::is_same_v<T, bool>) {
                return *v ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::string>) {
                return quote(*v);
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                std::string out = "[";
                for (std::size_t i = 0; i < v->size(); ++i) out += (i ? ", " : "") + format_number((*v)[i]);
                return out + "]";
            } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                std::string out = "[";
                for (std::size_t i = 0; i < v->size(); ++i) out += (i ? ", " : "") + quote((*v)[i]);
                return out + "]";
            } else if constexpr (std::is_same_v<T, BoundaryCondition>) {
                return *v == BoundaryCondition::dirichlet_zero ? "\"dirichlet_zero\"" : "\"neumann_zero\"";
            } else {
                return fmt::format("{}", *v);
            }
        },
        slot);
}

} // namespace

std::uint64_t parse_u64(std::string_view text) {
    std::string clean;
    for (char ch : text)
        if (ch != '_') clean.push_back(ch);
    std::string_view s = clean;
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ValidationError(fmt::format("not an unsigned 64-bit integer: '{}'", text));
    return v;
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
    auto tables = lex(text, source);
    ExperimentConfig c;
    c.ions.clear();
    const Binder binder{source};
    auto sections = sections_of(c);
    for (auto& t : tables) {
        if (t.name == "ions") {
            IonModel ion;
            binder.bind_table(t, ion_keys(ion));
            if (!t.entries.contains("id")) throw ConfigError(source, t.line, "[[ions]] entry without an id");
            ion.orientation = orientation_of(ion.stark_coefficient_khz_per_v_cm);
            try {
                ion.validate();
            } catch (const ValidationError& e) {
                throw ConfigError(source, t.line, e.what());
            }
            for (const auto& other : c.ions)
                if (other.id == ion.id) throw ConfigError(source, t.line, fmt::format("duplicate ion id '{}'", ion.id));
            c.ions.push_back(std::move(ion));
            continue;
        }
        const auto it = std::find_if(sections.begin(), sections.end(), [&](const Section& s) { return t.name == s.name; });
        if (it == sections.end()) throw ConfigError(source, t.line, fmt::format("unknown section [{}]", t.name));
        binder.bind_table(t, it->keys);
    }
    // Component checks run once everything is bound, anchored at the section header.
    for (auto& s : sections) {
        const auto t = std::find_if(tables.begin(), tables.end(), [&](const RawTable& r) { return r.name == s.name; });
        try {
            s.check();
        } catch (const ValidationError& e) {
            throw ConfigError(source, t == tables.end() ? 0 : t->line, fmt::format("[{}] {}", s.name, e.what()));
        }
    }
    try {
        c.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(source, 0, e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path, 0, "cannot open configuration file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string serialize_config(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    std::string out;
    for (const auto& s : sections_of(c)) {
        out += fmt::format("[{}]\n", s.name);
        for (const auto& k : s.keys) {
            const std::string v = format_slot(k.slot);
            if (!v.empty()) out += fmt::format("{} = {}\n", k.name, v);
        }
        out += "\n";
    }
    for (auto& ion : c.ions) {
        out += "[[ions]]\n";
        for (const auto& k : ion_keys(ion)) out += fmt::format("{} = {}\n", k.name, format_slot(k.slot));
        out += "\n";
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
    return out;
}

std::string config_digest(const ExperimentConfig& config) { return sha256_hex(serialize_config(config)); }

void ExperimentConfig::validate() const {
    layout.validate();
    dielectric.validate();
    cavity.validate();
    emitter.params.validate();
    protocol.validate();
    detector.validate();
    std::set<std::string> ids;
    for (const auto& i : ions) {
        i.validate();
        if (!ids.insert(i.id).second) throw ValidationError(fmt::format("duplicate ion id '{}'", i.id));
    }
    if (!ions.empty() && !ids.contains(stark.ion))
        throw ValidationError(fmt::format("[stark] ion '{}' is not in the registry", stark.ion));
    for (const auto& id : fig4b.summary_ions)
        if (!ids.contains(id)) throw ValidationError(fmt::format("[fig4b] summary ion '{}' is not in the registry", id));
}

const IonModel& ExperimentConfig::ion(std::string_view id) const {
    for (const auto& i : ions)
        if (i.id == id) return i;
    throw ValidationError(fmt::format("ion '{}' is not in the registry", id));
}

double ExperimentConfig::effective_lifetime_us() const {
    return starksim::effective_lifetime(emitter.params, purcell_factor(cavity));
}

SimulatedIon ExperimentConfig::simulated_ion(const IonModel& i) const {
    return {i, effective_lifetime_us(), emitter.saturation_excitation_prob};
}

std::vector<SimulatedIon> ExperimentConfig::simulated_ions() const {
    std::vector<SimulatedIon> out;
    for (const auto& i : ions) out.push_back(simulated_ion(i));
    return out;
}

MeshGrading ExperimentConfig::grading() const {
    MeshGrading g;
    g.enabled = solver.mesh_grading;
    return g;
}

} // namespace starksim
