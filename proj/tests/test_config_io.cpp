#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "starksim/config.hpp"
#include "starksim/io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace starksim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("starksim_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int error_line(const std::string& text) {
    try {
        parse_config(text, "t.toml");
    } catch (const ConfigError& e) {
        return e.line();
    }
    return -1;
}

} // namespace

TEST_CASE("the shipped configuration parses") {
    const auto c = load_config(STARKSIM_CONFIG);
    CHECK(c.ions.size() == 7);
    CHECK(c.ion("1").stark_coefficient_khz_per_v_cm == 19.8);
    CHECK(c.ion("7").stark_coefficient_khz_per_v_cm == 9.8);
    CHECK(c.ion("3").orientation == OrientationClass::minus);
    CHECK(c.run.seed == 0xE531536ULL);
    CHECK(c.decay.n_pulses == 10'000'000);
    CHECK(c.stark.voltages_v.size() >= 6);
    CHECK(c.emitter.params.enhancement_factor.value() == 278.0);
    CHECK(c.effective_lifetime_us() == doctest::Approx(11400.0 / 278.0));
    CHECK(c.protocol.pulses_per_point() == 50000);
    CHECK(c.layout.electrode_potentials_v.first == 166.5);
    CHECK_THROWS_AS(c.ion("nine"), ValidationError);

    // Ions 1-6 reproduce the reported mean and spread of |s|.
    std::vector<double> mags;
    for (const auto& ion : c.ions)
        if (ion.id != "7") mags.push_back(std::abs(ion.stark_coefficient_khz_per_v_cm));
    const double mean = std::accumulate(mags.begin(), mags.end(), 0.0) / 6.0;
    double ss = 0.0;
    for (double m : mags) ss += (m - mean) * (m - mean);
    CHECK(mean == doctest::Approx(20.0).epsilon(1e-4));
    CHECK(std::sqrt(ss / 5.0) == doctest::Approx(5.8).epsilon(1e-4));
}

TEST_CASE("ion 2 is calibrated to 182.9 MHz at 333 V by the solver") {
    const auto c = load_config(STARKSIM_CONFIG);
    const auto per_volt = probe_field_per_volt(c.layout, c.dielectric, c.solver.grid_spacing_um, c.solver.options,
                                               c.grading());
    const double e333 = per_volt.parallel_v_per_cm * 333.0;
    const double s_needed = 182.9 / e333 * 1e3;
    CHECK(c.ion("2").stark_coefficient_khz_per_v_cm == doctest::Approx(s_needed).epsilon(1e-5));
    CHECK(stark_shift_empirical(c.ion("2"), {e333, 0.0}).shift_mhz == doctest::Approx(182.9).epsilon(1e-5));
}

TEST_CASE("serialization round-trips and the digest is stable") {
    const auto c = load_config(STARKSIM_CONFIG);
    const std::string text = serialize_config(c);
    const auto back = parse_config(text);
    CHECK(back == c);
    CHECK(serialize_config(back) == text);
    CHECK(config_digest(back) == config_digest(c));
    CHECK(config_digest(c).size() == 64);

    auto changed = c;
    changed.run.seed += 1;
    CHECK(config_digest(changed) != config_digest(c));

    // Known SHA-256 test vector.
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("defaults fill omitted sections") {
    const auto c = parse_config("[[ions]]\nid = \"1\"\nzero_field_frequency_mhz = 1\n"
                                "stark_coefficient_khz_per_v_cm = -3\nzero_field_fwhm_mhz = 6.7\n");
    CHECK(c.ions.size() == 1);
    CHECK(c.ions[0].orientation == OrientationClass::minus);
    CHECK(c.protocol == PLEProtocol{});
    CHECK(c.run.seed == kDefaultMasterSeed);
}

TEST_CASE("configuration errors carry line numbers") {
    const std::string ion = "[[ions]]\nid = \"a\"\nzero_field_frequency_mhz = 0\nstark_coefficient_khz_per_v_cm = 1\n";
    CHECK(error_line("[layout]\ngap_um = 100\nbogus = 3\n" + ion) == 3);
    CHECK(error_line("\n[nonsense]\n" + ion) == 2);
    CHECK(error_line("[layout]\ngap_um = 100\ngap_um = 120\n" + ion) == 3);
    CHECK(error_line("[layout]\n[layout]\n" + ion) == 2);
    CHECK(error_line("[layout]\ngap_um = abc\n" + ion) == 2);
    // Range checks span several keys, so they point at the section header.
    CHECK(error_line("\n[layout]\ngap_um = -5\n" + ion) == 2);
    CHECK(error_line("[stark]\nvoltages_v = [0, 1, x]\n" + ion) == 2);
    CHECK(error_line("[solver]\nboundary = \"sideways\"\n" + ion) == 2);
    CHECK(error_line("[run]\nseed = 0xZZ\n" + ion) == 2);
    CHECK(error_line("[layout\n" + ion) == 1);
    CHECK(error_line("gap_um = 1\n" + ion) == 1);
    CHECK(error_line(ion + ion) == 5);  // duplicate ion id

    try {
        parse_config("[layout]\ngap_um = abc\n" + ion, "bad.toml");
        FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).starts_with("bad.toml:2:"));
        CHECK(std::string(e.what()).find("gap_um") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("[stark]\nion = \"b\"\n" + ion), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/starksim.toml"), ValidationError);
}

TEST_CASE("numeric literals") {
    CHECK(parse_u64("123") == 123);
    CHECK(parse_u64("0xE531536") == 0xE531536ULL);
    CHECK(parse_u64("1_000") == 1000);
    CHECK_THROWS(parse_u64("-1"));
    CHECK_THROWS(parse_u64("0x"));
    CHECK_THROWS(parse_u64("99999999999999999999999"));
}

TEST_CASE("CSV datasets round-trip exactly") {
    const auto dir = scratch("csv");
    ScanResult scan;
    scan.points = {{-10.0, 3, 5.0}, {-5.0, 0, 5.0}, {0.1 + 0.2, 123456789012ULL, 5.0}};
    write_ple_csv(dir / "ple.csv", scan);
    const auto s = read_ple_csv(dir / "ple.csv");
    REQUIRE(s.points.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(s.points[i].frequency_offset_mhz == scan.points[i].frequency_offset_mhz);
        CHECK(s.points[i].counts == scan.points[i].counts);
        CHECK(s.points[i].integration_s == scan.points[i].integration_s);
    }

    TimeHistogram h;
    h.bin_width_us = 2.5;
    h.counts = {10, 9, 8, 0};
    write_decay_csv(dir / "decay.csv", h);
    const auto hb = read_decay_csv(dir / "decay.csv");
    CHECK(hb.counts == h.counts);
    CHECK(hb.bin_width_us == h.bin_width_us);

    LagHistogram g;
    g.max_lag = 2;
    g.coincidences = {10, 12, 1, 11, 9};
    write_g2_csv(dir / "g2.csv", g);
    const auto gb = read_g2_csv(dir / "g2.csv");
    CHECK(gb.max_lag == 2);
    CHECK(gb.coincidences == g.coincidences);
    CHECK(slurp(dir / "g2.csv").find("0,1,0.095238095238095233") != std::string::npos);

    const std::vector<StarkScanRow> rows{{0.0, 0.0, -148.3, 0.2, 6.7, 0.5}, {333.0, 6907.3, -11.5, 0.21, 7.3, 0.6}};
    write_stark_csv(dir / "stark.csv", rows);
    CHECK(read_stark_csv(dir / "stark.csv") == rows);

    const std::vector<FitReportRow> report{{"tau", 41.02, 0.37, "us"}, {"g2_zero", 0.1, 0.01, "1"}};
    write_fit_report(dir / "fit.csv", report);
    CHECK(read_fit_report(dir / "fit.csv") == report);

    CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("malformed CSV input is rejected") {
    const auto dir = scratch("badcsv");
    std::ofstream(dir / "wrong_header.csv") << "a,b\n1,2\n";
    CHECK_THROWS_AS(read_ple_csv(dir / "wrong_header.csv"), IoError);
    std::ofstream(dir / "short.csv") << "frequency_mhz,counts,integration_s\n1,2\n";
    CHECK_THROWS_AS(read_ple_csv(dir / "short.csv"), IoError);
    CHECK_THROWS_AS(read_ple_csv(dir / "missing.csv"), IoError);
}

TEST_CASE("manifest records the seed and a digest that matches the saved config") {
    const auto dir = scratch("manifest");
    const auto c = load_config(STARKSIM_CONFIG);
    RunManifest m;
    m.master_seed = c.run.seed;
    m.config_digest = config_digest(c);
    m.command = "starksim reproduce fig3b";
    m.timestamp_utc = utc_timestamp();
    write_manifest(dir, m, serialize_config(c));

    const auto back = read_manifest(dir);
    CHECK(back.master_seed == m.master_seed);
    CHECK(back.config_digest == m.config_digest);
    CHECK(back.artifact_version == kArtifactVersion);
    CHECK(back.command == m.command);
    CHECK(back.timestamp_utc.ends_with("Z"));
    CHECK(config_digest(load_config((dir / "config.toml").string())) == back.config_digest);

    const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(j.contains("master_seed"));
    CHECK(j.contains("config_digest"));
}
