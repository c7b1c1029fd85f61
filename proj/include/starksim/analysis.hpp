#pragma once

// Parameter extraction from photon-counting data: peak search, Lorentzian
// and exponential fits with Poisson weights, weighted straight-line fits and
// the zero-delay autocorrelation.

#include "starksim/experiment_sim.hpp"
#include "starksim/least_squares.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace starksim {

struct FitParameter {
    std::string name;
    double value = 0.0;
    double standard_error = 0.0;
};

struct FitResult {
    std::vector<FitParameter> parameters;
    double chi_square = 0.0;
    double reduced_chi_square = 0.0;
    bool converged = false;
    int iterations = 0;

    const FitParameter& operator[](std::string_view name) const;
    double value(std::string_view name) const { return (*this)[name].value; }
    double error(std::string_view name) const { return (*this)[name].standard_error; }
};

struct PeakCandidate {
    double center_mhz = 0.0;
    double height = 0.0;
    double prominence = 0.0;
};

struct G2Estimate {
    double g2_zero = 0.0;
    double standard_error = 0.0;
};

struct DataPoint {
    double x = 0.0;
    double y = 0.0;
};

struct LorentzianGuess {
    double amplitude = 0.0;
    double center = 0.0;
    double fwhm = 1.0;
    double offset = 0.0;
};

struct LinearPoint {
    double field_v_per_cm = 0.0;
    double shift_mhz = 0.0;
    double shift_error_mhz = 0.0;
};

double lorentzian(double x, double amplitude, double center, double fwhm, double offset);

// Poisson-weighted residuals (y - model) / sqrt(max(y, 1)) for the parameter
// vectors (amplitude, center, fwhm, offset) and (amplitude, tau, background).
// With a fixed background the exponential parameters are (amplitude, tau).
ResidualFunction lorentzian_residuals(std::vector<DataPoint> data);
ResidualFunction exponential_residuals(std::vector<DataPoint> data,
                                       std::optional<double> fixed_background = std::nullopt);

std::vector<DataPoint> scan_points(const ScanResult& scan);

// Local maxima whose prominence exceeds threshold_sigma * sqrt(background),
// with the background taken as the median count (floored at one count).
// Prominence is the smaller of the topographic prominence and the height
// above background. The height must also be less likely under
// Poisson(background) than a one-sided threshold_sigma Gaussian excursion,
// which keeps the false-positive rate down at low counts. Sorted by centre
// frequency; plateaus report their lowest-frequency point.
std::vector<PeakCandidate> find_peaks(const ScanResult& scan, double threshold_sigma);

// Parameters: amplitude, center, fwhm, offset.
FitResult fit_lorentzian(std::span<const DataPoint> points, std::optional<LorentzianGuess> initial = {});

// Parameters: amplitude (counts per bin at t = 0), tau (us), background (counts per bin).
// Uses bins whose centre is at or after fit_start_us. A known floor (for
// example the calibrated dark rate) can be held fixed; it is then reported
// with zero standard error. With only ~2 lifetimes in the window a free floor
// is strongly correlated with tau and roughly quadruples its error.
FitResult fit_exponential_decay(const TimeHistogram& histogram, double fit_start_us = 0.0,
                                std::optional<double> fixed_background = std::nullopt);

// Parameters: slope (kHz/(V/cm)), intercept (MHz). Inverse-variance weights;
// when every error is zero the fit falls back to ordinary least squares with
// errors scaled by the residual variance.
FitResult fit_linear_weighted(std::span<const LinearPoint> points);

G2Estimate estimate_g2_zero(const LagHistogram& histogram);

} // namespace starksim
