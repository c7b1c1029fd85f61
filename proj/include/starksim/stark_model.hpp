#pragma once

// Field-to-frequency mapping for single ions. Frequencies are in MHz, fields in
// V/cm and Stark coefficients in kHz/(V/cm). Positive shifts are blue shifts.

#include "starksim/electrostatics.hpp"

#include <Eigen/Core>
#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace starksim {

// Tensor form of the shift: linear term from the dipole-moment difference,
// quadratic term from the polarisability difference, both acting on the
// local field L*E. Units are already divided by Planck's constant.
struct StarkTensors {
    Eigen::Vector3d delta_mu_mhz_per_v_cm = Eigen::Vector3d::Zero();
    Eigen::Matrix3d local_field_correction = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d delta_alpha_mhz_per_v_cm2 = Eigen::Matrix3d::Zero();

    void validate() const;

    bool operator==(const StarkTensors&) const = default;
};

enum class OrientationClass { plus, minus };

struct IonModel {
    std::string id;
    double zero_field_frequency_mhz = 0.0;
    double stark_coefficient_khz_per_v_cm = 0.0;
    OrientationClass orientation = OrientationClass::plus;
    double zero_field_fwhm_mhz = 1.0;
    double broadening_mhz_per_kv_cm = 0.0;
    std::optional<StarkTensors> tensors;

    void validate() const;

    bool operator==(const IonModel&) const = default;
};

// Orientation class implied by the sign of a Stark coefficient.
OrientationClass orientation_of(double stark_coefficient_khz_per_v_cm);

struct ShiftResult {
    double shift_mhz = 0.0;
    double fwhm_mhz = 0.0;
};

double stark_shift_full(const StarkTensors& tensors, const Eigen::Vector3d& field_v_per_cm);

// shift = s * E_parallel; fwhm = fwhm0 + broadening * |E_parallel|.
ShiftResult stark_shift_empirical(const IonModel& ion, const FieldVector& field);

// Shifts of the four site orientations, sorted ascending. With the field
// perpendicular to b they are +/-|s|E each twice. Otherwise each orientation
// shifts by |s| (p_i . E) with E = (0, E_parallel, E_perpendicular) in the
// (D1, D2, b) frame and p_i the configured unit projections.
std::array<double, 4> orientation_shifts(double magnitude_khz_per_v_cm, const FieldVector& field,
                                         bool field_perp_b,
                                         const std::array<Eigen::Vector3d, 4>& projections = {});

// The four orientations generated from one by the C2 rotation about b and
// inversion: u, -u, C2(u), -C2(u).
std::array<Eigen::Vector3d, 4> site_orientations(const Eigen::Vector3d& u);

class NoResonanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ResonanceOutOfRangeError : public std::runtime_error {
public:
    ResonanceOutOfRangeError(const std::string& what, double required_voltage)
        : std::runtime_error(what), required_voltage_(required_voltage) {}
    double required_voltage() const noexcept { return required_voltage_; }

private:
    double required_voltage_;
};

// Voltage at which two ions sharing one field become degenerate.
double resonance_voltage(const IonModel& ion_a, const IonModel& ion_b, double volts_to_field_v_per_cm_per_v,
                         double v_max);

// Optical frequency of an ion (zero-field offset plus shift) under a voltage.
double detuned_frequency_mhz(const IonModel& ion, double volts_to_field_v_per_cm_per_v, double voltage);

} // namespace starksim
