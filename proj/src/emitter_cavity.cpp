#include "starksim/emitter_cavity.hpp"

#include "starksim/errors.hpp"

#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace starksim {

void CavityParams::validate() const {
    if (!(quality_factor > 0.0)) throw ValidationError("cavity: quality factor must be positive");
    if (!(mode_volume > 0.0)) throw ValidationError("cavity: mode volume must be positive");
    if (!(dip_depth >= 0.0 && dip_depth <= 1.0)) throw ValidationError("cavity: dip depth must lie in [0, 1]");
    if (!(center_frequency_ghz > 0.0)) throw ValidationError("cavity: centre frequency must be positive");
    if (!(refractive_index >= 1.0)) throw ValidationError("cavity: refractive index must be >= 1");
}

void EmitterParams::validate() const {
    if (!(bulk_lifetime_ms > 0.0)) throw ValidationError("emitter: bulk lifetime must be positive");
    if (!(branching_ratio > 0.0 && branching_ratio <= 1.0))
        throw ValidationError("emitter: branching ratio must lie in (0, 1]");
    if (enhancement_factor && !(*enhancement_factor >= 1.0))
        throw ValidationError("emitter: enhancement factor must be >= 1");
}

double EffectiveEmitter::lifetime_limited_fwhm_mhz(double lifetime_us) {
    return 1.0 / (2.0 * std::numbers::pi * lifetime_us);
}

EffectiveEmitter::EffectiveEmitter(double lifetime_us, double fwhm_mhz, double frequency_mhz,
                                   double saturation_excitation_prob)
    : lifetime_us_(lifetime_us), fwhm_mhz_(fwhm_mhz), frequency_mhz_(frequency_mhz),
      saturation_excitation_prob_(saturation_excitation_prob) {
    if (!(lifetime_us > 0.0)) throw ValidationError("effective emitter: lifetime must be positive");
    if (!(fwhm_mhz >= lifetime_limited_fwhm_mhz(lifetime_us)))
        throw ValidationError(fmt::format("effective emitter: linewidth {} MHz is below the lifetime limit {} MHz",
                                          fwhm_mhz, lifetime_limited_fwhm_mhz(lifetime_us)));
    if (!(saturation_excitation_prob >= 0.0 && saturation_excitation_prob <= 1.0))
        throw ValidationError("effective emitter: saturation excitation probability must lie in [0, 1]");
    if (!std::isfinite(frequency_mhz)) throw ValidationError("effective emitter: frequency must be finite");
}

double purcell_factor(const CavityParams& cavity) {
    cavity.validate();
    return 3.0 / (4.0 * std::numbers::pi * std::numbers::pi) * cavity.quality_factor / cavity.mode_volume;
}

double effective_lifetime(const EmitterParams& emitter, double purcell) {
    emitter.validate();
    if (!(purcell >= 0.0)) throw ValidationError("Purcell factor must be >= 0");
    const double bulk_us = emitter.bulk_lifetime_ms * 1e3;
    if (emitter.enhancement_factor) return bulk_us / *emitter.enhancement_factor;
    return bulk_us / (1.0 + emitter.branching_ratio * purcell);
}

double cavity_reflection(const CavityParams& cavity, double frequency_ghz) {
    const double x = 2.0 * (frequency_ghz - cavity.center_frequency_ghz) / cavity.linewidth_ghz();
    return 1.0 - cavity.dip_depth / (1.0 + x * x);
}

double excitation_probability(const EffectiveEmitter& emitter, double detuning_mhz) {
    const double x = 2.0 * detuning_mhz / emitter.fwhm_mhz();
    return emitter.saturation_excitation_prob() / (1.0 + x * x);
}

} // namespace starksim
