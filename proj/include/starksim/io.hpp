#pragma once

// CSV datasets and run manifests. CSV files use `\n` line endings and print
// doubles with 17 significant digits.

#include "starksim/experiment_sim.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace starksim {

inline constexpr const char* kArtifactVersion = "1.0.0";

struct StarkScanRow {
    double voltage_v = 0.0;
    double field_v_per_cm = 0.0;
    double peak_mhz = 0.0;
    double peak_err_mhz = 0.0;
    double fwhm_mhz = 0.0;
    double fwhm_err_mhz = 0.0;

    bool operator==(const StarkScanRow&) const = default;
};

struct FitReportRow {
    std::string quantity;
    double value = 0.0;
    double stderr_value = 0.0;
    std::string units;

    bool operator==(const FitReportRow&) const = default;
};

struct RunManifest {
    std::uint64_t master_seed = 0;
    std::string config_digest;
    std::string artifact_version = kArtifactVersion;
    std::string command;
    std::string timestamp_utc;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string format_double(double v);

void write_ple_csv(const std::filesystem::path& path, const ScanResult& scan);
ScanResult read_ple_csv(const std::filesystem::path& path);

void write_decay_csv(const std::filesystem::path& path, const TimeHistogram& histogram);
TimeHistogram read_decay_csv(const std::filesystem::path& path);

// normalized = C(k) / mean of C over the nonzero lags (0 when that mean is 0).
void write_g2_csv(const std::filesystem::path& path, const LagHistogram& histogram);
LagHistogram read_g2_csv(const std::filesystem::path& path);

void write_stark_csv(const std::filesystem::path& path, const std::vector<StarkScanRow>& rows);
std::vector<StarkScanRow> read_stark_csv(const std::filesystem::path& path);

void write_fit_report(const std::filesystem::path& path, const std::vector<FitReportRow>& rows);
std::vector<FitReportRow> read_fit_report(const std::filesystem::path& path);

// Potential dump with header x_um,y_um,potential_v.
void write_grid_csv(const std::filesystem::path& path, const PotentialGrid& grid);

// Writes manifest.json plus config.toml (the canonical configuration text)
// into `dir`.
void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest, const std::string& config_text);
RunManifest read_manifest(const std::filesystem::path& dir);

std::string utc_timestamp();

} // namespace starksim
