#include "starksim/experiment_sim.hpp"

#include "starksim/errors.hpp"
#include "starksim/parallel.hpp"
#include "starksim/random.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

namespace starksim {

namespace {

// Pulses in which a process with per-pulse probability p fires, by
// geometric skipping over the non-firing pulses.
template <typename Fn>
void for_each_firing_pulse(std::uint64_t n_pulses, double p, Rng& rng, Fn&& fn) {
    if (!(p > 0.0)) return;
    if (p >= 1.0) {
        for (std::uint64_t i = 0; i < n_pulses; ++i) fn(i);
        return;
    }
    std::geometric_distribution<std::uint64_t> skip(p);
    for (std::uint64_t i = skip(rng); i < n_pulses; i += 1 + skip(rng)) fn(i);
}

// Homogeneous Poisson events with `mean_per_pulse` expected events per
// detection window, placed uniformly in the window.
void poisson_events(std::uint64_t n_pulses, double mean_per_pulse, double window_length_us, PhotonOrigin origin,
                    Rng& rng, std::vector<PhotonRecord>& out) {
    if (!(mean_per_pulse > 0.0)) return;
    std::exponential_distribution<double> gap(mean_per_pulse);  // in units of windows
    const auto end = static_cast<double>(n_pulses);
    for (double t = gap(rng); t < end; t += gap(rng)) {
        const auto pulse = static_cast<std::uint64_t>(t);
        const double frac = t - static_cast<double>(pulse);
        out.push_back({pulse, std::clamp(frac * window_length_us, 0.0, window_length_us), origin});
    }
}

// Emission delay measured from the window opening, conditioned on landing
// inside the window.
double sample_window_time(double lifetime_us, const PLEProtocol& protocol, Rng& rng) {
    const double a = std::exp(-protocol.window_delay_us / lifetime_us);
    const double b = std::exp(-(protocol.window_delay_us + protocol.window_length_us) / lifetime_us);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double t = -lifetime_us * std::log(a - u(rng) * (a - b)) - protocol.window_delay_us;
    return std::clamp(t, 0.0, protocol.window_length_us);
}

void sort_records(std::vector<PhotonRecord>& records) {
    std::sort(records.begin(), records.end(), [](const PhotonRecord& l, const PhotonRecord& r) {
        return l.pulse_index != r.pulse_index ? l.pulse_index < r.pulse_index
                                              : l.time_in_window_us < r.time_in_window_us;
    });
}

} // namespace

void PLEProtocol::validate() const {
    if (!(pulse_length_us > 0.0 && repetition_rate_khz > 0.0 && window_delay_us > 0.0 && window_length_us > 0.0 &&
          integration_time_s > 0.0 && scan_pitch_mhz > 0.0))
        throw ValidationError("protocol: all durations, rates and the scan pitch must be positive");
    if (pulse_length_us + window_delay_us + window_length_us > period_us() * (1.0 + 1e-12))
        throw ValidationError(fmt::format("protocol: pulse + delay + window ({} us) exceeds the repetition period ({} us)",
                                          pulse_length_us + window_delay_us + window_length_us, period_us()));
    if (!(scan_max_mhz >= scan_min_mhz)) throw ValidationError("protocol: scan range is empty");
    if (pulses_per_point() == 0) throw ValidationError("protocol: integration time shorter than one pulse period");
}

std::uint64_t PLEProtocol::pulses_per_point() const {
    return static_cast<std::uint64_t>(std::llround(integration_time_s * repetition_rate_khz * 1e3));
}

std::vector<double> PLEProtocol::scan_frequencies() const {
    const auto n = static_cast<std::size_t>(std::floor((scan_max_mhz - scan_min_mhz) / scan_pitch_mhz + 1e-9)) + 1;
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = scan_min_mhz + scan_pitch_mhz * static_cast<double>(i);
    return f;
}

double PLEProtocol::window_probability(double lifetime_us) const {
    return std::exp(-window_delay_us / lifetime_us) - std::exp(-(window_delay_us + window_length_us) / lifetime_us);
}

void DetectorModel::validate() const {
    if (!(total_efficiency >= 0.0 && total_efficiency <= 1.0))
        throw ValidationError("detector: total efficiency must lie in [0, 1]");
    if (!(dark_rate_hz >= 0.0)) throw ValidationError("detector: dark rate must be >= 0");
}

std::uint64_t TimeHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

EffectiveEmitter effective_emitter(const SimulatedIon& ion, const FieldVector& field) {
    const ShiftResult s = stark_shift_empirical(ion.ion, field);
    return EffectiveEmitter(ion.lifetime_us, s.fwhm_mhz, ion.ion.zero_field_frequency_mhz + s.shift_mhz,
                            ion.saturation_excitation_prob);
}

FieldVector probe_field_per_volt(ElectrodeLayout layout, const DielectricMap& dielectric, double spacing_um,
                                 const SolverOptions& options, const MeshGrading& grading) {
    layout.electrode_potentials_v = {0.5, -0.5};
    SolverOptions unit = options;
    unit.tolerance_v = std::min(options.tolerance_v, 1e-8);
    return field_at(solve_potential(layout, dielectric, spacing_um, unit, grading), layout.probe);
}

ScanResult simulate_ple_scan(const std::vector<SimulatedIon>& ions, const PLEProtocol& protocol,
                             const DetectorModel& detector, const FieldVector& field, std::uint64_t seed,
                             unsigned workers) {
    protocol.validate();
    detector.validate();
    std::vector<EffectiveEmitter> emitters;
    std::vector<double> window_prob;
    for (const auto& ion : ions) {
        ion.ion.validate();
        emitters.push_back(effective_emitter(ion, field));
        window_prob.push_back(protocol.window_probability(ion.lifetime_us));
    }

    const std::vector<double> freqs = protocol.scan_frequencies();
    const std::uint64_t pulses = protocol.pulses_per_point();
    const double dark_mean = detector.dark_counts_per_window(protocol) * static_cast<double>(pulses);

    ScanResult result;
    result.master_seed = seed;
    result.points.resize(freqs.size());
    parallel_for(freqs.size(), workers, [&](std::size_t i) {
        Rng rng = make_rng(mix_seed(seed, i));
        std::uint64_t counts = 0;
        for (std::size_t k = 0; k < emitters.size(); ++k) {
            const double p = excitation_probability(emitters[k], freqs[i] - emitters[k].frequency_mhz()) *
                             window_prob[k] * detector.total_efficiency;
            if (p > 0.0) counts += std::binomial_distribution<std::uint64_t>(pulses, std::min(p, 1.0))(rng);
        }
        if (dark_mean > 0.0) counts += std::poisson_distribution<std::uint64_t>(dark_mean)(rng);
        result.points[i] = {freqs[i], counts, protocol.integration_time_s};
    });
    return result;
}

std::vector<PhotonRecord> simulate_decay_records(const EffectiveEmitter& emitter, const PLEProtocol& protocol,
                                                 const DetectorModel& detector, std::uint64_t n_pulses,
                                                 std::uint64_t seed) {
    protocol.validate();
    detector.validate();
    if (n_pulses == 0) throw ValidationError("decay: number of pulses must be positive");

    const double q = excitation_probability(emitter, 0.0) * protocol.window_probability(emitter.lifetime_us()) *
                     detector.total_efficiency;
    std::vector<PhotonRecord> records;
    Rng signal_rng = make_rng(mix_seed(seed, 0));
    Rng time_rng = make_rng(mix_seed(seed, 1));
    for_each_firing_pulse(n_pulses, q, signal_rng, [&](std::uint64_t pulse) {
        records.push_back({pulse, sample_window_time(emitter.lifetime_us(), protocol, time_rng), PhotonOrigin::signal});
    });
    Rng dark_rng = make_rng(mix_seed(seed, 2));
    poisson_events(n_pulses, detector.dark_counts_per_window(protocol), protocol.window_length_us, PhotonOrigin::dark,
                   dark_rng, records);
    sort_records(records);
    return records;
}

TimeHistogram histogram_records(const std::vector<PhotonRecord>& records, double window_length_us,
                                double bin_width_us) {
    if (!(bin_width_us > 0.0)) throw ValidationError("histogram: bin width must be positive");
    const double nbins = window_length_us / bin_width_us;
    if (std::abs(nbins - std::round(nbins)) > 1e-9 * nbins || std::round(nbins) < 1.0)
        throw ValidationError("histogram: window length must be a whole number of bins");
    TimeHistogram h;
    h.bin_width_us = bin_width_us;
    h.counts.assign(static_cast<std::size_t>(std::round(nbins)), 0);
    for (const auto& r : records) {
        auto bin = static_cast<std::size_t>(r.time_in_window_us / bin_width_us);
        h.counts[std::min(bin, h.counts.size() - 1)] += 1;
    }
    return h;
}

TimeHistogram simulate_decay_histogram(const EffectiveEmitter& emitter, const PLEProtocol& protocol,
                                       const DetectorModel& detector, std::uint64_t n_pulses, double bin_width_us,
                                       std::uint64_t seed) {
    if (!(bin_width_us > 0.0)) throw ValidationError("decay: bin width must be positive");
    return histogram_records(simulate_decay_records(emitter, protocol, detector, n_pulses, seed),
                             protocol.window_length_us, bin_width_us);
}

LagHistogram simulate_g2_histogram(const EffectiveEmitter& emitter, double background_fraction,
                                   const PLEProtocol& protocol, const DetectorModel& detector,
                                   std::uint64_t n_pulses, int max_lag, std::uint64_t seed, SourceStatistics source) {
    protocol.validate();
    detector.validate();
    if (!(background_fraction >= 0.0 && background_fraction < 1.0))
        throw ValidationError("g2: background fraction must lie in [0, 1)");
    if (max_lag < 1) throw ValidationError("g2: maximum lag must be at least 1");
    if (n_pulses == 0) throw ValidationError("g2: number of pulses must be positive");

    const double q = excitation_probability(emitter, 0.0) * protocol.window_probability(emitter.lifetime_us()) *
                     detector.total_efficiency;
    const double background = q * background_fraction / (1.0 - background_fraction);

    std::vector<PhotonRecord> records;
    Rng signal_rng = make_rng(mix_seed(seed, 0));
    Rng time_rng = make_rng(mix_seed(seed, 1));
    if (source == SourceStatistics::single_emitter) {
        for_each_firing_pulse(n_pulses, q, signal_rng, [&](std::uint64_t pulse) {
            records.push_back(
                {pulse, sample_window_time(emitter.lifetime_us(), protocol, time_rng), PhotonOrigin::signal});
        });
    } else {
        poisson_events(n_pulses, q, protocol.window_length_us, PhotonOrigin::signal, signal_rng, records);
    }
    Rng background_rng = make_rng(mix_seed(seed, 2));
    poisson_events(n_pulses, background, protocol.window_length_us, PhotonOrigin::dark, background_rng, records);
    sort_records(records);

    // 50:50 beam splitter, then per-pulse counts in each arm.
    struct PulseCount {
        std::uint64_t pulse;
        std::uint64_t count;
    };
    std::vector<PulseCount> arm_a;
    std::vector<PulseCount> arm_b;
    Rng split_rng = make_rng(mix_seed(seed, 3));
    std::bernoulli_distribution to_a(0.5);
    for (const auto& r : records) {
        auto& arm = to_a(split_rng) ? arm_a : arm_b;
        if (!arm.empty() && arm.back().pulse == r.pulse_index)
            ++arm.back().count;
        else
            arm.push_back({r.pulse_index, 1});
    }

    LagHistogram h;
    h.max_lag = max_lag;
    h.coincidences.assign(static_cast<std::size_t>(2 * max_lag + 1), 0);
    const auto lag = static_cast<std::uint64_t>(max_lag);
    std::size_t lo = 0;
    for (const auto& a : arm_a) {
        const std::uint64_t first = a.pulse >= lag ? a.pulse - lag : 0;
        while (lo < arm_b.size() && arm_b[lo].pulse < first) ++lo;
        for (std::size_t k = lo; k < arm_b.size() && arm_b[k].pulse <= a.pulse + lag; ++k) {
            const auto d = static_cast<std::int64_t>(arm_b[k].pulse) - static_cast<std::int64_t>(a.pulse);
            h.coincidences[static_cast<std::size_t>(d + max_lag)] += a.count * arm_b[k].count;
        }
    }
    return h;
}

std::vector<StarkScanPoint> simulate_stark_scan(const SimulatedIon& ion, const std::vector<double>& voltages,
                                                const FieldVector& field_per_volt, const PLEProtocol& protocol,
                                                const DetectorModel& detector, std::uint64_t seed,
                                                double max_voltage_v, double half_range_mhz, unsigned workers) {
    protocol.validate();
    if (!(half_range_mhz > 0.0)) throw ValidationError("stark scan: half range must be positive");
    for (double v : voltages)
        if (!std::isfinite(v) || std::abs(v) > max_voltage_v)
            throw ValidationError(fmt::format("stark scan: voltage {} V outside +/-{} V", v, max_voltage_v));

    std::vector<StarkScanPoint> out(voltages.size());
    parallel_for(voltages.size(), workers, [&](std::size_t k) {
        const double v = voltages[k];
        const FieldVector e{field_per_volt.parallel_v_per_cm * v, field_per_volt.perpendicular_v_per_cm * v};
        const ShiftResult s = stark_shift_empirical(ion.ion, e);
        const double peak = ion.ion.zero_field_frequency_mhz + s.shift_mhz;
        PLEProtocol window = protocol;
        window.scan_min_mhz = std::floor((peak - half_range_mhz) / protocol.scan_pitch_mhz) * protocol.scan_pitch_mhz;
        window.scan_max_mhz = std::ceil((peak + half_range_mhz) / protocol.scan_pitch_mhz) * protocol.scan_pitch_mhz;
        out[k] = {v, e, peak, s.fwhm_mhz, simulate_ple_scan({ion}, window, detector, e, mix_seed(seed, k), 1)};
    });
    return out;
}

} // namespace starksim
