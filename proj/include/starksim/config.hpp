#pragma once

// Experiment configuration: a TOML subset with units carried in key names.
//
// Accepted syntax: `# comments`, `[section]`, `[[ions]]` array tables, and
// `key = value` where a value is a number (decimal or 0x hex integer), a
// "string", true/false, or a single-line [array] of numbers or strings. Unknown
// sections and keys are rejected with the offending line number.

#include "starksim/electrostatics.hpp"
#include "starksim/emitter_cavity.hpp"
#include "starksim/errors.hpp"
#include "starksim/experiment_sim.hpp"
#include "starksim/random.hpp"
#include "starksim/stark_model.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace starksim {

class ConfigError : public ValidationError {
public:
    ConfigError(const std::string& source, int line, const std::string& message);
    int line() const noexcept { return line_; }

private:
    int line_;
};

struct SolverSettings {
    double grid_spacing_um = 2.5;
    SolverOptions options{};
    bool mesh_grading = true;

    bool operator==(const SolverSettings&) const = default;
};

struct EmitterSettings {
    EmitterParams params{};
    double saturation_excitation_prob = 0.5;

    bool operator==(const EmitterSettings&) const = default;
};

struct StarkSettings {
    std::string ion = "1";
    std::vector<double> voltages_v{0.0, 66.6, 133.2, 199.8, 266.4, 333.0};
    double max_voltage_v = 333.0;
    double half_range_mhz = 40.0;

    bool operator==(const StarkSettings&) const = default;
};

struct DecaySettings {
    std::uint64_t n_pulses = 10'000'000;
    double bin_width_us = 1.0;
    double fit_start_us = 0.0;

    bool operator==(const DecaySettings&) const = default;
};

struct G2Settings {
    std::uint64_t n_pulses = 200'000'000;
    double background_fraction = 0.051;
    int max_lag = 10;

    bool operator==(const G2Settings&) const = default;
};

struct Fig2Settings {
    double threshold_sigma = 5.0;
    double fit_half_width_mhz = 25.0;
    double voltage_v = 0.0;

    bool operator==(const Fig2Settings&) const = default;
};

struct Fig4bSettings {
    // Ions entering the |s| mean and spread; empty means every ion.
    std::vector<std::string> summary_ions;

    bool operator==(const Fig4bSettings&) const = default;
};

struct RunSettings {
    std::uint64_t seed = kDefaultMasterSeed;
    std::string output_dir = "out";

    bool operator==(const RunSettings&) const = default;
};

struct ExperimentConfig {
    ElectrodeLayout layout{};
    SolverSettings solver{};
    DielectricMap dielectric{};
    CavityParams cavity{};
    EmitterSettings emitter{};
    PLEProtocol protocol{};
    DetectorModel detector{};
    std::vector<IonModel> ions;
    StarkSettings stark{};
    DecaySettings decay{};
    G2Settings g2{};
    Fig2Settings fig2{};
    Fig4bSettings fig4b{};
    RunSettings run{};

    bool operator==(const ExperimentConfig&) const = default;

    // Cross-section checks: every component validates and ion ids are unique.
    void validate() const;

    const IonModel& ion(std::string_view id) const;
    // Cavity-modified lifetime shared by every ion.
    double effective_lifetime_us() const;
    SimulatedIon simulated_ion(const IonModel& ion) const;
    std::vector<SimulatedIon> simulated_ions() const;
    MeshGrading grading() const;
};

ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);

// Canonical text form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

// Hex SHA-256 of the canonical text.
std::string config_digest(const ExperimentConfig& config);
std::string sha256_hex(std::string_view data);

// Decimal or 0x-prefixed hex.
std::uint64_t parse_u64(std::string_view text);

} // namespace starksim
