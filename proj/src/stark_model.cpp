#include "starksim/stark_model.hpp"

#include "starksim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace starksim {

namespace {
constexpr double kMhzPerKhz = 1e-3;
}

void StarkTensors::validate() const {
    if (!delta_mu_mhz_per_v_cm.allFinite() || !local_field_correction.allFinite() ||
        !delta_alpha_mhz_per_v_cm2.allFinite())
        throw ValidationError("Stark tensors must be finite");
    const Eigen::Matrix3d& a = delta_alpha_mhz_per_v_cm2;
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()))
        throw ValidationError("polarisability difference must be symmetric");
}

OrientationClass orientation_of(double stark_coefficient_khz_per_v_cm) {
    return stark_coefficient_khz_per_v_cm < 0.0 ? OrientationClass::minus : OrientationClass::plus;
}

void IonModel::validate() const {
    if (!(zero_field_fwhm_mhz > 0.0))
        throw ValidationError(fmt::format("ion {}: zero-field linewidth must be positive", id));
    if (!(broadening_mhz_per_kv_cm >= 0.0))
        throw ValidationError(fmt::format("ion {}: broadening coefficient must be non-negative", id));
    if (!std::isfinite(zero_field_frequency_mhz) || !std::isfinite(stark_coefficient_khz_per_v_cm))
        throw ValidationError(fmt::format("ion {}: frequency and Stark coefficient must be finite", id));
    if (stark_coefficient_khz_per_v_cm != 0.0 && orientation != orientation_of(stark_coefficient_khz_per_v_cm))
        throw ValidationError(fmt::format("ion {}: orientation class disagrees with the sign of s", id));
    if (tensors) tensors->validate();
}

double stark_shift_full(const StarkTensors& tensors, const Eigen::Vector3d& field_v_per_cm) {
    const Eigen::Vector3d local = tensors.local_field_correction * field_v_per_cm;
    return -tensors.delta_mu_mhz_per_v_cm.dot(local) - 0.5 * local.dot(tensors.delta_alpha_mhz_per_v_cm2 * local);
}

ShiftResult stark_shift_empirical(const IonModel& ion, const FieldVector& field) {
    const double e = field.parallel_v_per_cm;
    return {ion.stark_coefficient_khz_per_v_cm * e * kMhzPerKhz,
            ion.zero_field_fwhm_mhz + ion.broadening_mhz_per_kv_cm * std::abs(e) * 1e-3};
}

std::array<Eigen::Vector3d, 4> site_orientations(const Eigen::Vector3d& u) {
    const Eigen::Vector3d rotated(-u.x(), -u.y(), u.z());
    return {u, -u, rotated, -rotated};
}

std::array<double, 4> orientation_shifts(double magnitude_khz_per_v_cm, const FieldVector& field, bool field_perp_b,
                                         const std::array<Eigen::Vector3d, 4>& projections) {
    if (!(magnitude_khz_per_v_cm >= 0.0)) throw ValidationError("Stark coefficient magnitude must be >= 0");
    std::array<double, 4> shifts{};
    if (field_perp_b) {
        const double s = std::abs(magnitude_khz_per_v_cm * field.parallel_v_per_cm * kMhzPerKhz);
        shifts = {-s, -s, s, s};
        return shifts;
    }
    const Eigen::Vector3d e(0.0, field.parallel_v_per_cm, field.perpendicular_v_per_cm);
    for (std::size_t k = 0; k < 4; ++k) shifts[k] = magnitude_khz_per_v_cm * projections[k].dot(e) * kMhzPerKhz;
    std::sort(shifts.begin(), shifts.end());
    return shifts;
}

double resonance_voltage(const IonModel& ion_a, const IonModel& ion_b, double volts_to_field_v_per_cm_per_v,
                         double v_max) {
    if (!(volts_to_field_v_per_cm_per_v > 0.0)) throw ValidationError("volts-to-field factor must be positive");
    if (!(v_max > 0.0)) throw ValidationError("maximum voltage must be positive");
    const double df0 = ion_b.zero_field_frequency_mhz - ion_a.zero_field_frequency_mhz;
    if (df0 == 0.0) return 0.0;
    const double ds = (ion_a.stark_coefficient_khz_per_v_cm - ion_b.stark_coefficient_khz_per_v_cm) * kMhzPerKhz;
    if (ds == 0.0)
        throw NoResonanceError(fmt::format("ions {} and {} have equal Stark coefficients and differ by {} MHz",
                                           ion_a.id, ion_b.id, df0));
    const double v = df0 / (ds * volts_to_field_v_per_cm_per_v);
    if (std::abs(v) > v_max)
        throw ResonanceOutOfRangeError(
            fmt::format("resonance of {} and {} needs {:.6g} V, beyond the {:.6g} V limit", ion_a.id, ion_b.id, v, v_max),
            v);
    return v;
}

double detuned_frequency_mhz(const IonModel& ion, double volts_to_field_v_per_cm_per_v, double voltage) {
    const FieldVector e{volts_to_field_v_per_cm_per_v * voltage, 0.0};
    return ion.zero_field_frequency_mhz + stark_shift_empirical(ion, e).shift_mhz;
}

} // namespace starksim
