#include "commands.hpp"

#include "starksim/analysis.hpp"
#include "starksim/io.hpp"
#include "starksim/parallel.hpp"
#include "starksim/random.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <iostream>

namespace starksim::cli {

namespace {

template <typename Fn>
auto stage(int code, Fn&& fn) {
    try {
        return fn();
    } catch (const CommandError&) {
        throw;
    } catch (const ConvergenceError& e) {
        throw CommandError(kSolver, fmt::format("{} (last update {:.3g} V)", e.what(), e.last_residual()));
    } catch (const IoError& e) {
        throw CommandError(kIo, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        throw CommandError(kIo, e.what());
    } catch (const std::exception& e) {
        throw CommandError(code, e.what());
    }
}

void emit(const std::filesystem::path& p) { std::cout << p.string() << '\n'; }

void note(const std::string& s) { std::cerr << s << '\n'; }

void finish(const Context& ctx) {
    stage(kIo, [&] {
        RunManifest m;
        m.master_seed = ctx.config.run.seed;
        m.config_digest = config_digest(ctx.config);
        m.command = ctx.command_line;
        m.timestamp_utc = utc_timestamp();
        write_manifest(ctx.out_dir, m, serialize_config(ctx.config));
    });
    emit(ctx.out_dir / "manifest.json");
}

void write(const std::filesystem::path& p, auto&& writer) {
    stage(kIo, [&] { writer(p); });
    emit(p);
}

FieldVector field_per_volt(const ExperimentConfig& c) {
    return stage(kSolver, [&] {
        return probe_field_per_volt(c.layout, c.dielectric, c.solver.grid_spacing_um, c.solver.options, c.grading());
    });
}

FieldVector scaled(const FieldVector& f, double v) {
    return {f.parallel_v_per_cm * v, f.perpendicular_v_per_cm * v};
}

std::size_t ion_index(const ExperimentConfig& c, const std::string& id) {
    for (std::size_t i = 0; i < c.ions.size(); ++i)
        if (c.ions[i].id == id) return i;
    throw CommandError(kConfig, fmt::format("ion '{}' is not in the registry", id));
}

struct Report {
    std::vector<FitReportRow> rows;
    void add(std::string quantity, double value, double err, std::string units) {
        rows.push_back({std::move(quantity), value, err, std::move(units)});
    }
};

std::vector<StarkScanRow> fit_stark_points(const std::vector<StarkScanPoint>& points) {
    return stage(kFitting, [&] {
        std::vector<StarkScanRow> rows;
        for (const auto& p : points) {
            const auto f = fit_lorentzian(scan_points(p.scan));
            rows.push_back({p.voltage_v, p.field.parallel_v_per_cm, f.value("center"), f.error("center"), f.value("fwhm"),
                            f.error("fwhm")});
        }
        return rows;
    });
}

FitResult fit_stark_line(const std::vector<StarkScanRow>& rows) {
    return stage(kFitting, [&] {
        std::vector<LinearPoint> pts;
        for (const auto& r : rows) pts.push_back({r.field_v_per_cm, r.peak_mhz, r.peak_err_mhz});
        return fit_linear_weighted(pts);
    });
}

std::vector<StarkScanPoint> run_stark(const Context& ctx, const FieldVector& per_volt, std::size_t ion_idx) {
    const auto& c = ctx.config;
    return stage(kSimulation, [&] {
        return simulate_stark_scan(c.simulated_ion(c.ions[ion_idx]), c.stark.voltages_v, per_volt, c.protocol, c.detector,
                                   mix_seed(c.run.seed, ion_idx), c.stark.max_voltage_v, c.stark.half_range_mhz,
                                   ctx.workers);
    });
}

void add_line_fit(Report& r, const std::string& suffix, const FitResult& line) {
    r.add("stark_coefficient" + suffix, line.value("slope"), line.error("slope"), "kHz/(V/cm)");
    r.add("zero_field_frequency" + suffix, line.value("intercept"), line.error("intercept"), "MHz");
    r.add("line_reduced_chi_square" + suffix, line.reduced_chi_square, 0.0, "1");
}

const StarkScanRow* row_at(const std::vector<StarkScanRow>& rows, double v) {
    for (const auto& r : rows)
        if (r.voltage_v == v) return &r;
    return nullptr;
}

// Fitted shift at the largest |V| relative to the 0 V fit (or the fitted
// intercept when 0 V was not scanned).
std::pair<double, double> max_shift(const std::vector<StarkScanRow>& rows, const FitResult& line) {
    const auto top = std::max_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return std::abs(a.voltage_v) < std::abs(b.voltage_v);
    });
    if (const auto* zero = row_at(rows, 0.0))
        return {top->peak_mhz - zero->peak_mhz, std::hypot(top->peak_err_mhz, zero->peak_err_mhz)};
    return {top->peak_mhz - line.value("intercept"), std::hypot(top->peak_err_mhz, line.error("intercept"))};
}

ScanResult run_ple(const Context& ctx, double voltage) {
    const auto& c = ctx.config;
    const FieldVector f = voltage == 0.0 ? FieldVector{} : scaled(field_per_volt(c), voltage);
    auto scan = stage(kSimulation, [&] {
        return simulate_ple_scan(c.simulated_ions(), c.protocol, c.detector, f, c.run.seed, ctx.workers);
    });
    scan.config_digest = config_digest(c);
    return scan;
}

void fit_ple(const Context& ctx, const ScanResult& scan, Report& report) {
    const auto& c = ctx.config;
    stage(kFitting, [&] {
        const auto peaks = find_peaks(scan, c.fig2.threshold_sigma);
        report.add("peak_count", static_cast<double>(peaks.size()), 0.0, "1");
        const auto pts = scan_points(scan);
        int k = 0;
        for (const auto& p : peaks) {
            ++k;
            std::vector<DataPoint> window;
            for (const auto& d : pts)
                if (std::abs(d.x - p.center_mhz) <= c.fig2.fit_half_width_mhz) window.push_back(d);
            if (window.size() < 8) {
                note(fmt::format("peak {} at {} MHz: too few points for a line fit, skipped", k, p.center_mhz));
                continue;
            }
            const auto f = fit_lorentzian(window);
            report.add(fmt::format("peak{}_center", k), f.value("center"), f.error("center"), "MHz");
            report.add(fmt::format("peak{}_fwhm", k), f.value("fwhm"), f.error("fwhm"), "MHz");
            report.add(fmt::format("peak{}_amplitude", k), f.value("amplitude"), f.error("amplitude"), "counts");
        }
    });
}

EffectiveEmitter resonant_emitter(const ExperimentConfig& c, const std::string& id) {
    return stage(kConfig, [&] { return effective_emitter(c.simulated_ion(c.ion(id)), FieldVector{}); });
}

TimeHistogram run_decay(const Context& ctx, const std::string& id) {
    const auto& c = ctx.config;
    const auto em = resonant_emitter(c, id);
    return stage(kSimulation, [&] {
        return simulate_decay_histogram(em, c.protocol, c.detector, c.decay.n_pulses, c.decay.bin_width_us, c.run.seed);
    });
}

void fit_decay(const ExperimentConfig& c, const TimeHistogram& h, Report& report) {
    stage(kFitting, [&] {
        // Dark floor per bin from the calibrated detector.
        const double floor = c.detector.dark_rate_hz * 1e-6 * h.bin_width_us * static_cast<double>(c.decay.n_pulses);
        const auto f = fit_exponential_decay(h, c.decay.fit_start_us, floor);
        const double bulk_us = c.emitter.params.bulk_lifetime_ms * 1e3;
        const double tau = f.value("tau"), dtau = f.error("tau");
        report.add("tau", tau, dtau, "us");
        report.add("amplitude", f.value("amplitude"), f.error("amplitude"), "counts/bin");
        report.add("background", f.value("background"), 0.0, "counts/bin");
        report.add("decay_reduced_chi_square", f.reduced_chi_square, 0.0, "1");
        report.add("lifetime_reduction", bulk_us / tau, bulk_us * dtau / (tau * tau), "1");
        const auto free = fit_exponential_decay(h, c.decay.fit_start_us);
        report.add("tau_free_background", free.value("tau"), free.error("tau"), "us");
        report.add("background_free_fit", free.value("background"), free.error("background"), "counts/bin");
    });
}

LagHistogram run_g2(const Context& ctx, const std::string& id) {
    const auto& c = ctx.config;
    const auto em = resonant_emitter(c, id);
    return stage(kSimulation, [&] {
        return simulate_g2_histogram(em, c.g2.background_fraction, c.protocol, c.detector, c.g2.n_pulses, c.g2.max_lag,
                                     c.run.seed);
    });
}

void fit_g2(const LagHistogram& h, Report& report) {
    stage(kFitting, [&] {
        const auto g = estimate_g2_zero(h);
        report.add("g2_zero", g.g2_zero, g.standard_error, "1");
    });
}

void stark_for_ion(const Context& ctx, const FieldVector& per_volt, std::size_t idx, const std::string& csv_name,
                   Report& report, const std::string& suffix, std::vector<StarkScanPoint>* raw = nullptr) {
    const auto& ion = ctx.config.ions[idx];
    const auto points = run_stark(ctx, per_volt, idx);
    const auto rows = fit_stark_points(points);
    write(ctx.out_dir / csv_name, [&](const auto& p) { write_stark_csv(p, rows); });
    const auto line = fit_stark_line(rows);
    add_line_fit(report, suffix, line);
    const auto [shift, shift_err] = max_shift(rows, line);
    report.add("max_shift" + suffix, shift, shift_err, "MHz");
    report.add("max_shift_over_zero_field_fwhm" + suffix, shift / ion.zero_field_fwhm_mhz,
               shift_err / ion.zero_field_fwhm_mhz, "1");
    if (const auto* zero = row_at(rows, 0.0)) {
        const double r = shift / zero->fwhm_mhz;
        report.add("max_shift_over_fitted_zero_field_fwhm" + suffix, r,
                   std::abs(r) * std::hypot(shift_err / shift, zero->fwhm_err_mhz / zero->fwhm_mhz), "1");
    }
    if (raw) *raw = points;
}

void write_report(const Context& ctx, const Report& r) {
    write(ctx.out_dir / "fit_report.csv", [&](const auto& p) { write_fit_report(p, r.rows); });
}

} // namespace

Context make_context(const std::string& config_path, std::optional<std::string> seed,
                     std::optional<std::string> out_dir, const std::string& command_line) {
    Context ctx;
    try {
        ctx.config = load_config(config_path);
        if (seed) ctx.config.run.seed = parse_u64(*seed);
    } catch (const std::exception& e) {
        throw CommandError(kConfig, e.what());
    }
    if (out_dir) ctx.config.run.output_dir = *out_dir;
    ctx.out_dir = ctx.config.run.output_dir;
    ctx.command_line = command_line;
    ctx.workers = default_workers();
    return ctx;
}

void cmd_field(const Context& ctx, std::optional<double> voltage, std::optional<std::string> grid_dump) {
    const auto& c = ctx.config;
    const double v = voltage.value_or(c.layout.applied_voltage());
    const FieldVector per_volt = field_per_volt(c);
    const FieldVector f = scaled(per_volt, v);
    note(fmt::format("probe ({}, {}) um at {} V: E_parallel = {:.6g} V/cm, E_perpendicular = {:.6g} V/cm "
                     "({:.8g} V/cm per V)",
                     c.layout.probe.x_um, c.layout.probe.y_um, v, f.parallel_v_per_cm, f.perpendicular_v_per_cm,
                     per_volt.parallel_v_per_cm));
    Report r;
    r.add("voltage", v, 0.0, "V");
    r.add("field_parallel", f.parallel_v_per_cm, 0.0, "V/cm");
    r.add("field_perpendicular", f.perpendicular_v_per_cm, 0.0, "V/cm");
    r.add("field_parallel_per_volt", per_volt.parallel_v_per_cm, 0.0, "V/cm/V");
    write(ctx.out_dir / "field_report.csv", [&](const auto& p) { write_fit_report(p, r.rows); });
    if (grid_dump) {
        auto layout = c.layout;
        layout.electrode_potentials_v = {0.5 * v, -0.5 * v};
        const auto grid = stage(kSolver, [&] {
            return solve_potential(layout, c.dielectric, c.solver.grid_spacing_um, c.solver.options, c.grading());
        });
        write(*grid_dump, [&](const auto& p) { write_grid_csv(p, grid); });
    }
    finish(ctx);
}

void cmd_ple(const Context& ctx, std::optional<double> voltage) {
    const auto scan = run_ple(ctx, voltage.value_or(ctx.config.fig2.voltage_v));
    write(ctx.out_dir / "ple_scan.csv", [&](const auto& p) { write_ple_csv(p, scan); });
    finish(ctx);
}

void cmd_decay(const Context& ctx, std::optional<std::string> ion) {
    const auto h = run_decay(ctx, ion.value_or(ctx.config.stark.ion));
    write(ctx.out_dir / "decay.csv", [&](const auto& p) { write_decay_csv(p, h); });
    finish(ctx);
}

void cmd_g2(const Context& ctx, std::optional<std::string> ion) {
    const auto h = run_g2(ctx, ion.value_or(ctx.config.stark.ion));
    write(ctx.out_dir / "g2.csv", [&](const auto& p) { write_g2_csv(p, h); });
    finish(ctx);
}

void cmd_stark(const Context& ctx, std::optional<std::string> ion) {
    const auto idx = ion_index(ctx.config, ion.value_or(ctx.config.stark.ion));
    Report r;
    stark_for_ion(ctx, field_per_volt(ctx.config), idx, "stark_scan.csv", r, "");
    write_report(ctx, r);
    finish(ctx);
}

void cmd_fit(const Context& ctx, const std::string& kind, const std::filesystem::path& input) {
    Report r;
    if (kind == "ple") {
        fit_ple(ctx, stage(kIo, [&] { return read_ple_csv(input); }), r);
    } else if (kind == "decay") {
        fit_decay(ctx.config, stage(kIo, [&] { return read_decay_csv(input); }), r);
    } else if (kind == "g2") {
        fit_g2(stage(kIo, [&] { return read_g2_csv(input); }), r);
    } else if (kind == "stark") {
        const auto rows = stage(kIo, [&] { return read_stark_csv(input); });
        const auto line = fit_stark_line(rows);
        add_line_fit(r, "", line);
    } else {
        throw CommandError(kUsage, fmt::format("unknown fit kind '{}'", kind));
    }
    write_report(ctx, r);
    finish(ctx);
}

void cmd_resonance(const Context& ctx, const std::string& ion_a, const std::string& ion_b) {
    const auto& c = ctx.config;
    const auto& a = c.ions[ion_index(c, ion_a)];
    const auto& b = c.ions[ion_index(c, ion_b)];
    const double k = field_per_volt(c).parallel_v_per_cm;
    double v = 0.0;
    bool feasible = true;
    try {
        v = resonance_voltage(a, b, k, c.stark.max_voltage_v);
    } catch (const NoResonanceError& e) {
        throw CommandError(kNoResonance, e.what());
    } catch (const ResonanceOutOfRangeError& e) {
        v = e.required_voltage();
        feasible = false;
    } catch (const std::exception& e) {
        throw CommandError(kConfig, e.what());
    }
    const double residual = detuned_frequency_mhz(a, k, v) - detuned_frequency_mhz(b, k, v);
    note(fmt::format("ions {} and {}: resonance at {:.6g} V ({:.6g} V/cm), residual detuning {:.3g} kHz, {} the {} V limit",
                     a.id, b.id, v, v * k, residual * 1e3, feasible ? "within" : "beyond", c.stark.max_voltage_v));
    Report r;
    r.add("required_voltage", v, 0.0, "V");
    r.add("required_field", v * k, 0.0, "V/cm");
    r.add("residual_detuning", residual * 1e3, 0.0, "kHz");
    r.add("max_voltage", c.stark.max_voltage_v, 0.0, "V");
    r.add("feasible", feasible ? 1.0 : 0.0, 0.0, "1");
    write(ctx.out_dir / "resonance_report.csv", [&](const auto& p) { write_fit_report(p, r.rows); });
    finish(ctx);
    if (!feasible)
        throw CommandError(kResonanceOutOfRange, fmt::format("resonance needs {:.6g} V, beyond the {} V limit", v,
                                                             c.stark.max_voltage_v));
}

void cmd_reproduce(const Context& ctx, const std::string& figure) {
    const auto& c = ctx.config;
    Report r;
    if (figure == "fig2") {
        const auto scan = run_ple(ctx, c.fig2.voltage_v);
        write(ctx.out_dir / "ple_scan.csv", [&](const auto& p) { write_ple_csv(p, scan); });
        fit_ple(ctx, scan, r);
    } else if (figure == "fig3b") {
        const auto h = run_decay(ctx, c.stark.ion);
        write(ctx.out_dir / "decay.csv", [&](const auto& p) { write_decay_csv(p, h); });
        fit_decay(c, h, r);
    } else if (figure == "fig3c") {
        const auto h = run_g2(ctx, c.stark.ion);
        write(ctx.out_dir / "g2.csv", [&](const auto& p) { write_g2_csv(p, h); });
        fit_g2(h, r);
    } else if (figure == "fig4a") {
        std::vector<StarkScanPoint> raw;
        stark_for_ion(ctx, field_per_volt(c), ion_index(c, c.stark.ion), "stark_scan.csv", r, "", &raw);
        for (std::size_t k = 0; k < raw.size(); ++k)
            write(ctx.out_dir / fmt::format("ple_scan_v{:02}.csv", k),
                  [&](const auto& p) { write_ple_csv(p, raw[k].scan); });
    } else if (figure == "fig4b") {
        if (c.ions.empty()) throw CommandError(kConfig, "fig4b needs at least one ion in the registry");
        const FieldVector per_volt = field_per_volt(c);
        std::vector<double> slopes;
        for (std::size_t i = 0; i < c.ions.size(); ++i) {
            const std::string& id = c.ions[i].id;
            stark_for_ion(ctx, per_volt, i, fmt::format("stark_scan_ion{}.csv", id), r, "_ion" + id);
        }
        const auto& chosen = c.fig4b.summary_ions;
        for (const auto& ion : c.ions) {
            if (!chosen.empty() && std::find(chosen.begin(), chosen.end(), ion.id) == chosen.end()) continue;
            for (const auto& row : r.rows)
                if (row.quantity == "stark_coefficient_ion" + ion.id) slopes.push_back(row.value);
        }
        double mean = 0.0;
        for (double s : slopes) mean += std::abs(s);
        mean /= static_cast<double>(slopes.size());
        double ss = 0.0;
        for (double s : slopes) ss += (std::abs(s) - mean) * (std::abs(s) - mean);
        const double sd = slopes.size() > 1 ? std::sqrt(ss / static_cast<double>(slopes.size() - 1)) : 0.0;
        r.add("abs_stark_coefficient_mean", mean, sd / std::sqrt(static_cast<double>(slopes.size())), "kHz/(V/cm)");
        r.add("abs_stark_coefficient_sd", sd, 0.0, "kHz/(V/cm)");
        // Shift classes count every ion.
        int blue = 0, red = 0;
        for (const auto& row : r.rows)
            if (row.quantity.starts_with("stark_coefficient_ion")) (row.value > 0.0 ? blue : red) += 1;
        r.add("blue_shifting_ions", blue, 0.0, "1");
        r.add("red_shifting_ions", red, 0.0, "1");
    } else {
        throw CommandError(kUsage, fmt::format("unknown figure '{}'", figure));
    }
    write_report(ctx, r);
    finish(ctx);
}

} // namespace starksim::cli
