#pragma once

#include <optional>

namespace starksim {

struct CavityParams {
    double center_frequency_ghz = 195115.0;
    double quality_factor = 5.1e4;
    // Mode volume in units of (lambda/n)^3.
    double mode_volume = 1.0;
    double refractive_index = 3.48;
    double dip_depth = 1.0;

    void validate() const;
    double linewidth_ghz() const { return center_frequency_ghz / quality_factor; }

    bool operator==(const CavityParams&) const = default;
};

struct EmitterParams {
    double bulk_lifetime_ms = 11.4;
    double branching_ratio = 1.0;
    // tau_bulk / tau_cavity when measured directly; overrides the Purcell path.
    std::optional<double> enhancement_factor;

    void validate() const;

    bool operator==(const EmitterParams&) const = default;
};

// Emission parameters after cavity coupling. Construction enforces the
// lifetime-limited linewidth bound fwhm >= 1 / (2 pi tau).
class EffectiveEmitter {
public:
    EffectiveEmitter(double lifetime_us, double fwhm_mhz, double frequency_mhz, double saturation_excitation_prob);

    double lifetime_us() const { return lifetime_us_; }
    double fwhm_mhz() const { return fwhm_mhz_; }
    double frequency_mhz() const { return frequency_mhz_; }
    double saturation_excitation_prob() const { return saturation_excitation_prob_; }

    static double lifetime_limited_fwhm_mhz(double lifetime_us);

private:
    double lifetime_us_;
    double fwhm_mhz_;
    double frequency_mhz_;
    double saturation_excitation_prob_;
};

// 3/(4 pi^2) * Q / V with V in cubic reduced wavelengths.
double purcell_factor(const CavityParams& cavity);

// Cavity-modified lifetime in microseconds.
double effective_lifetime(const EmitterParams& emitter, double purcell);

// Lorentzian reflection dip of the cavity.
double cavity_reflection(const CavityParams& cavity, double frequency_ghz);

// Per-pulse excitation probability for a laser detuned from the emitter.
double excitation_probability(const EffectiveEmitter& emitter, double detuning_mhz);

} // namespace starksim
