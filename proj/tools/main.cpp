// starksim: field solving, photon-counting simulations and fits driven by a
// single experiment configuration file.
//
// Exit codes: 0 ok, 1 usage, 2 configuration, 3 field solver, 4 simulation,
// 5 fitting, 6 no resonance exists, 7 resonance beyond the voltage limit,
// 8 file I/O. Data paths go to stdout, diagnostics to stderr.

#include "commands.hpp"

#include <CLI11.hpp>
#include <iostream>

using namespace starksim::cli;

namespace {

struct Common {
    std::string config = "configs/paper.toml";
    std::optional<std::string> seed;
    std::optional<std::string> out;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Common& common) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", common.config, "Experiment configuration (TOML)")->capture_default_str();
    sub->add_option("--seed", common.seed, "Master seed (decimal or 0x hex); overrides [run] seed");
    sub->add_option("--out", common.out, "Output directory; overrides [run] output_dir");
    return sub;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stark tuning of a cavity-coupled single ion: simulate and analyse"};
    app.require_subcommand(1);
    Common common;

    std::optional<double> voltage;
    std::optional<std::string> grid_dump;
    std::optional<std::string> ion;
    std::string fit_kind;
    std::string fit_input;
    std::string ion_a, ion_b;
    std::string figure;

    auto* field = add_command(app, "field", "Probe-point field for an applied voltage", common);
    field->add_option("--voltage", voltage, "Applied voltage (V), driven as +V/2 and -V/2");
    field->add_option("--grid-dump", grid_dump, "Also write the potential grid to this CSV");

    auto* ple = add_command(app, "ple", "Simulate a PLE scan over the ion registry", common);
    ple->add_option("--voltage", voltage, "Applied voltage (V)");

    auto* decay = add_command(app, "decay", "Simulate a fluorescence decay histogram", common);
    decay->add_option("--ion", ion, "Ion id (default: [stark] ion)");

    auto* g2 = add_command(app, "g2", "Simulate a pulsed HBT coincidence histogram", common);
    g2->add_option("--ion", ion, "Ion id (default: [stark] ion)");

    auto* stark = add_command(app, "stark", "Voltage-swept PLE scans with peak and line fits", common);
    stark->add_option("--ion", ion, "Ion id (default: [stark] ion)");

    auto* fit = add_command(app, "fit", "Fit a dataset written by another subcommand", common);
    fit->add_option("--kind", fit_kind, "Dataset kind")->required()->check(CLI::IsMember({"ple", "decay", "g2", "stark"}));
    fit->add_option("--input", fit_input, "CSV file to fit")->required();

    auto* resonance = add_command(app, "resonance", "Voltage that tunes two ions into resonance", common);
    resonance->add_option("--ion-a", ion_a, "First ion id")->required();
    resonance->add_option("--ion-b", ion_b, "Second ion id")->required();

    auto* reproduce = add_command(app, "reproduce", "Regenerate a figure dataset", common);
    reproduce->add_option("figure", figure, "Figure")
        ->required()
        ->check(CLI::IsMember({"fig2", "fig3b", "fig3c", "fig4a", "fig4b"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    std::string command_line;
    for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

    try {
        const Context ctx = make_context(common.config, common.seed, common.out, command_line);
        if (*field)
            cmd_field(ctx, voltage, grid_dump);
        else if (*ple)
            cmd_ple(ctx, voltage);
        else if (*decay)
            cmd_decay(ctx, ion);
        else if (*g2)
            cmd_g2(ctx, ion);
        else if (*stark)
            cmd_stark(ctx, ion);
        else if (*fit)
            cmd_fit(ctx, fit_kind, fit_input);
        else if (*resonance)
            cmd_resonance(ctx, ion_a, ion_b);
        else if (*reproduce)
            cmd_reproduce(ctx, figure);
    } catch (const CommandError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kSimulation;
    }
    return kOk;
}
