#pragma once

// Seeded Monte Carlo of the pulsed photon-counting experiments: PLE scans,
// fluorescence decay, pulsed Hanbury Brown-Twiss coincidences and
// voltage-swept Stark scans.
//
// Timing convention: an excited ion starts decaying at the end of its
// excitation pulse. The detection window opens window_delay after the pulse
// and stays open for window_length; emission outside it is discarded.

#include "starksim/emitter_cavity.hpp"
#include "starksim/electrostatics.hpp"
#include "starksim/stark_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace starksim {

struct PLEProtocol {
    double pulse_length_us = 10.0;
    double repetition_rate_khz = 10.0;
    double window_delay_us = 1.0;
    double window_length_us = 85.0;
    double integration_time_s = 5.0;
    double scan_pitch_mhz = 5.0;
    double scan_min_mhz = -100.0;
    double scan_max_mhz = 100.0;

    void validate() const;
    double period_us() const { return 1e3 / repetition_rate_khz; }
    std::uint64_t pulses_per_point() const;
    std::vector<double> scan_frequencies() const;
    // Probability that an emission with the given lifetime lands in the window.
    double window_probability(double lifetime_us) const;

    bool operator==(const PLEProtocol&) const = default;
};

struct DetectorModel {
    double total_efficiency = 0.01;
    double dark_rate_hz = 2.0;

    void validate() const;
    double dark_counts_per_window(const PLEProtocol& protocol) const {
        return dark_rate_hz * protocol.window_length_us * 1e-6;
    }

    bool operator==(const DetectorModel&) const = default;
};

enum class PhotonOrigin { signal, dark };

struct PhotonRecord {
    std::uint64_t pulse_index = 0;
    double time_in_window_us = 0.0;
    PhotonOrigin origin = PhotonOrigin::signal;
};

struct ScanPoint {
    double frequency_offset_mhz = 0.0;
    std::uint64_t counts = 0;
    double integration_s = 0.0;
};

struct ScanResult {
    std::vector<ScanPoint> points;
    std::uint64_t master_seed = 0;
    std::string config_digest;
};

struct TimeHistogram {
    double bin_width_us = 1.0;
    std::vector<std::uint64_t> counts;

    double bin_center(std::size_t i) const { return (static_cast<double>(i) + 0.5) * bin_width_us; }
    std::uint64_t total() const;
};

// Coincidences C(k) between detector arms for pulse lags k in [-max_lag, max_lag].
struct LagHistogram {
    int max_lag = 10;
    std::vector<std::uint64_t> coincidences;

    std::uint64_t at(int lag) const { return coincidences.at(static_cast<std::size_t>(lag + max_lag)); }
};

// Ion plus the cavity-modified emission parameters it shares with the
// simulator. Frequency and linewidth under a field come from the ion model.
struct SimulatedIon {
    IonModel ion;
    double lifetime_us = 41.0;
    double saturation_excitation_prob = 0.5;
};

EffectiveEmitter effective_emitter(const SimulatedIon& ion, const FieldVector& field);

// Probe-point field for a unit applied voltage driven symmetrically (+1/2 V
// and -1/2 V). Fields at other voltages follow by linearity.
FieldVector probe_field_per_volt(ElectrodeLayout layout, const DielectricMap& dielectric, double spacing_um,
                                 const SolverOptions& options = {}, const MeshGrading& grading = {});

ScanResult simulate_ple_scan(const std::vector<SimulatedIon>& ions, const PLEProtocol& protocol,
                             const DetectorModel& detector, const FieldVector& field, std::uint64_t seed,
                             unsigned workers = 1);

// Detected photons for n_pulses of resonant excitation, sorted by pulse.
std::vector<PhotonRecord> simulate_decay_records(const EffectiveEmitter& emitter, const PLEProtocol& protocol,
                                                 const DetectorModel& detector, std::uint64_t n_pulses,
                                                 std::uint64_t seed);

TimeHistogram histogram_records(const std::vector<PhotonRecord>& records, double window_length_us,
                                double bin_width_us);

TimeHistogram simulate_decay_histogram(const EffectiveEmitter& emitter, const PLEProtocol& protocol,
                                       const DetectorModel& detector, std::uint64_t n_pulses, double bin_width_us,
                                       std::uint64_t seed);

enum class SourceStatistics { single_emitter, poissonian };

// Pulsed HBT experiment. background_fraction is the share of detected events
// that come from a Poissonian background (it subsumes detector dark counts).
// The Poissonian control replaces the single emitter by a Poisson source of
// the same mean.
LagHistogram simulate_g2_histogram(const EffectiveEmitter& emitter, double background_fraction,
                                   const PLEProtocol& protocol, const DetectorModel& detector,
                                   std::uint64_t n_pulses, int max_lag, std::uint64_t seed,
                                   SourceStatistics source = SourceStatistics::single_emitter);

struct StarkScanPoint {
    double voltage_v = 0.0;
    FieldVector field;
    double expected_peak_mhz = 0.0;
    double expected_fwhm_mhz = 0.0;
    ScanResult scan;
};

// One PLE scan per voltage over a window of +/- half_range_mhz around the
// expected line, aligned to the scan pitch.
std::vector<StarkScanPoint> simulate_stark_scan(const SimulatedIon& ion, const std::vector<double>& voltages,
                                                const FieldVector& field_per_volt, const PLEProtocol& protocol,
                                                const DetectorModel& detector, std::uint64_t seed,
                                                double max_voltage_v = 333.0, double half_range_mhz = 40.0,
                                                unsigned workers = 1);

} // namespace starksim
