#pragma once

#include "starksim/config.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace starksim::cli {

// Stable process exit codes.
enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfig = 2,
    kSolver = 3,
    kSimulation = 4,
    kFitting = 5,
    kNoResonance = 6,
    kResonanceOutOfRange = 7,
    kIo = 8,
};

class CommandError : public std::runtime_error {
public:
    CommandError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
    int code() const noexcept { return code_; }

private:
    int code_;
};

struct Context {
    ExperimentConfig config;
    std::filesystem::path out_dir;
    std::string command_line;
    unsigned workers = 1;
};

// Loads the config and applies the --seed / --out overrides.
Context make_context(const std::string& config_path, std::optional<std::string> seed,
                     std::optional<std::string> out_dir, const std::string& command_line);

void cmd_field(const Context& ctx, std::optional<double> voltage, std::optional<std::string> grid_dump);
void cmd_ple(const Context& ctx, std::optional<double> voltage);
void cmd_decay(const Context& ctx, std::optional<std::string> ion);
void cmd_g2(const Context& ctx, std::optional<std::string> ion);
void cmd_stark(const Context& ctx, std::optional<std::string> ion);
void cmd_fit(const Context& ctx, const std::string& kind, const std::filesystem::path& input);
void cmd_resonance(const Context& ctx, const std::string& ion_a, const std::string& ion_b);
void cmd_reproduce(const Context& ctx, const std::string& figure);

} // namespace starksim::cli
