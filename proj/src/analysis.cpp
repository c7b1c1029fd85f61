#include "starksim/analysis.hpp"

#include "starksim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>

namespace starksim {

namespace {

double poisson_sigma(double y) { return std::sqrt(std::max(y, 1.0)); }

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
    double m = v[n / 2];
    if (n % 2 == 0) {
        const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
        m = 0.5 * (m + lower);
    }
    return m;
}

FitResult package(const LeastSquaresSolution& sol, std::vector<std::string> names, std::size_t n_points) {
    FitResult out;
    const auto dof = static_cast<double>(n_points) - static_cast<double>(names.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        const double var = sol.covariance(i, i);
        out.parameters.push_back({names[k], sol.params[i], var >= 0.0 ? std::sqrt(var) : std::numeric_limits<double>::quiet_NaN()});
    }
    out.chi_square = sol.chi_square;
    out.reduced_chi_square = dof > 0 ? sol.chi_square / dof : std::numeric_limits<double>::quiet_NaN();
    out.converged = sol.converged;
    out.iterations = sol.iterations;
    return out;
}

LorentzianGuess auto_guess(std::span<const DataPoint> pts) {
    std::vector<double> ys;
    for (const auto& p : pts) ys.push_back(p.y);
    const double offset = median(ys);
    const auto peak = static_cast<std::size_t>(
        std::max_element(pts.begin(), pts.end(), [](const DataPoint& a, const DataPoint& b) { return a.y < b.y; }) - pts.begin());
    const double amp = pts[peak].y - offset;
    const double half = offset + 0.5 * amp;

    auto crossing = [&](int dir) {
        auto i = static_cast<std::ptrdiff_t>(peak);
        const auto n = static_cast<std::ptrdiff_t>(pts.size());
        while (i + dir >= 0 && i + dir < n && pts[static_cast<std::size_t>(i + dir)].y > half) i += dir;
        if (i + dir < 0 || i + dir >= n) return pts[static_cast<std::size_t>(i)].x;
        const auto& a = pts[static_cast<std::size_t>(i)];
        const auto& b = pts[static_cast<std::size_t>(i + dir)];
        const double t = (a.y - half) / (a.y - b.y);
        return a.x + t * (b.x - a.x);
    };
    double width = std::abs(crossing(+1) - crossing(-1));
    const double pitch = pts.size() > 1 ? std::abs(pts[1].x - pts[0].x) : 1.0;
    if (!(width > 0.0)) width = pitch;
    return {amp, pts[peak].x, std::max(width, 0.5 * pitch), offset};
}

} // namespace

const FitParameter& FitResult::operator[](std::string_view name) const {
    for (const auto& p : parameters)
        if (p.name == name) return p;
    throw std::out_of_range(fmt::format("no fit parameter named '{}'", name));
}

double lorentzian(double x, double amplitude, double center, double fwhm, double offset) {
    const double u = 2.0 * (x - center) / fwhm;
    return offset + amplitude / (1.0 + u * u);
}

ResidualFunction lorentzian_residuals(std::vector<DataPoint> data) {
    return [data = std::move(data)](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
        const auto n = static_cast<Eigen::Index>(data.size());
        r.resize(n);
        if (jac) jac->resize(n, 4);
        const double a = p[0], c = p[1], w = p[2], b = p[3];
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& d = data[static_cast<std::size_t>(i)];
            const double s = poisson_sigma(d.y);
            const double u = 2.0 * (d.x - c) / w;
            const double l = 1.0 / (1.0 + u * u);
            r[i] = (d.y - (b + a * l)) / s;
            if (jac) {
                // d model / d u = -2 a u l^2
                const double dmdu = -2.0 * a * u * l * l;
                (*jac)(i, 0) = -l / s;
                (*jac)(i, 1) = -dmdu * (-2.0 / w) / s;
                (*jac)(i, 2) = -dmdu * (-u / w) / s;
                (*jac)(i, 3) = -1.0 / s;
            }
        }
    };
}

ResidualFunction exponential_residuals(std::vector<DataPoint> data, std::optional<double> fixed_background) {
    return [data = std::move(data), fixed_background](const Eigen::VectorXd& p, Eigen::VectorXd& r,
                                                      Eigen::MatrixXd* jac) {
        const auto n = static_cast<Eigen::Index>(data.size());
        r.resize(n);
        if (jac) jac->resize(n, fixed_background ? 2 : 3);
        const double a = p[0], tau = p[1], b = fixed_background ? *fixed_background : p[2];
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& d = data[static_cast<std::size_t>(i)];
            const double s = poisson_sigma(d.y);
            if (!(tau > 0.0)) {
                r[i] = std::numeric_limits<double>::infinity();
                if (jac) jac->row(i).setZero();
                continue;
            }
            const double e = std::exp(-d.x / tau);
            r[i] = (d.y - (a * e + b)) / s;
            if (jac) {
                (*jac)(i, 0) = -e / s;
                (*jac)(i, 1) = -a * e * d.x / (tau * tau) / s;
                if (!fixed_background) (*jac)(i, 2) = -1.0 / s;
            }
        }
    };
}

std::vector<DataPoint> scan_points(const ScanResult& scan) {
    std::vector<DataPoint> out;
    out.reserve(scan.points.size());
    for (const auto& p : scan.points) out.push_back({p.frequency_offset_mhz, static_cast<double>(p.counts)});
    return out;
}

namespace {

// P(X >= k) for X ~ Poisson(mu), summed in log space from k upward.
double poisson_upper_tail(double k, double mu) {
    if (k <= 0.0) return 1.0;
    if (k <= mu) return 0.5;  // only used as a "not significant" marker
    double log_term = -mu + k * std::log(mu) - std::lgamma(k + 1.0);
    double sum = 0.0;
    for (double j = k; j < k + 1e7; j += 1.0) {
        const double t = std::exp(log_term);
        sum += t;
        if (t < 1e-16 * sum) break;
        log_term += std::log(mu) - std::log(j + 1.0);
    }
    return std::min(sum, 1.0);
}

} // namespace

std::vector<PeakCandidate> find_peaks(const ScanResult& scan, double threshold_sigma) {
    if (!(threshold_sigma > 0.0)) throw ValidationError("peak threshold must be positive");
    const auto& pts = scan.points;
    const std::size_t n = pts.size();
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<double>(pts[i].counts);
    const double bg = median(c);
    const double floor_bg = std::max(bg, 1.0);
    const double threshold = threshold_sigma * std::sqrt(floor_bg);
    // At low counts the Poisson tail is much heavier than the Gaussian one, so
    // a candidate must also be as improbable as a threshold_sigma Gaussian
    // excursion would be.
    const double tail = 0.5 * std::erfc(threshold_sigma / std::sqrt(2.0));

    std::vector<PeakCandidate> out;
    std::size_t i = 1;
    while (i + 1 < n) {
        if (!(c[i] > c[i - 1])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < n && c[j + 1] == c[i]) ++j;
        if (j + 1 >= n || c[j + 1] > c[i]) {
            i = j + 1;
            continue;
        }
        const double h = c[i];
        double left_min = h;
        for (std::size_t k = i; k-- > 0;) {
            if (c[k] > h) break;
            left_min = std::min(left_min, c[k]);
        }
        double right_min = h;
        for (std::size_t k = j + 1; k < n; ++k) {
            if (c[k] > h) break;
            right_min = std::min(right_min, c[k]);
        }
        const double prominence = std::min(h - std::max(left_min, right_min), h - bg);
        if (prominence > threshold && poisson_upper_tail(h, floor_bg) < tail) out.push_back({pts[i].frequency_offset_mhz, h, prominence});
        i = j + 1;
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.center_mhz < b.center_mhz; });
    return out;
}

FitResult fit_lorentzian(std::span<const DataPoint> points, std::optional<LorentzianGuess> initial) {
    if (points.size() < 8) throw ValidationError("Lorentzian fit needs at least 8 points");
    double ymin = points[0].y, ymax = points[0].y, xmin = points[0].x, xmax = points[0].x;
    for (const auto& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("non-finite data in Lorentzian fit");
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
    }
    if (ymax == ymin) throw ValidationError("Lorentzian fit on data with zero variance");
    const LorentzianGuess g = initial ? *initial : auto_guess(points);
    if (!(g.fwhm > 0.0)) throw ValidationError("initial FWHM must be positive");
    if (!(xmax - xmin > g.fwhm)) throw ValidationError("scan range must exceed the expected FWHM");

    Eigen::VectorXd p0(4);
    p0 << g.amplitude, g.center, g.fwhm, g.offset;
    auto sol = levenberg_marquardt(lorentzian_residuals({points.begin(), points.end()}), p0);
    sol.params[2] = std::abs(sol.params[2]);
    return package(sol, {"amplitude", "center", "fwhm", "offset"}, points.size());
}

FitResult fit_exponential_decay(const TimeHistogram& histogram, double fit_start_us,
                                std::optional<double> fixed_background) {
    if (!(histogram.bin_width_us > 0.0)) throw ValidationError("bin width must be positive");
    if (fixed_background && !(*fixed_background >= 0.0 && std::isfinite(*fixed_background)))
        throw ValidationError("fixed background must be finite and >= 0");
    std::vector<DataPoint> pts;
    for (std::size_t i = 0; i < histogram.counts.size(); ++i) {
        const double t = histogram.bin_center(i);
        if (t >= fit_start_us) pts.push_back({t, static_cast<double>(histogram.counts[i])});
    }
    if (pts.size() < 4) throw ValidationError("exponential fit needs at least 4 bins");

    double b = 0.0;
    if (fixed_background) {
        b = *fixed_background;
    } else {
        const std::size_t tail = std::max<std::size_t>(1, pts.size() / 10);
        for (std::size_t i = pts.size() - tail; i < pts.size(); ++i) b += pts[i].y;
        b /= static_cast<double>(tail);
    }
    const double a0 = pts.front().y - b;
    double tau = (pts.back().x - pts.front().x) / 3.0;
    for (const auto& p : pts)
        if (p.y - b < a0 / std::exp(1.0)) {
            tau = std::max(p.x - pts.front().x, histogram.bin_width_us);
            break;
        }
    Eigen::VectorXd p0(fixed_background ? 2 : 3);
    p0[0] = std::max(a0, 1.0) * std::exp(pts.front().x / tau);
    p0[1] = tau;
    if (!fixed_background) p0[2] = std::max(b, 0.0);
    const auto sol = levenberg_marquardt(exponential_residuals(pts, fixed_background), p0);
    if (!fixed_background) return package(sol, {"amplitude", "tau", "background"}, pts.size());
    FitResult out = package(sol, {"amplitude", "tau"}, pts.size());
    out.parameters.push_back({"background", *fixed_background, 0.0});
    return out;
}

FitResult fit_linear_weighted(std::span<const LinearPoint> points) {
    if (points.size() < 3) throw ValidationError("linear fit needs at least 3 points");
    std::size_t zero_errors = 0;
    for (const auto& p : points) {
        if (!std::isfinite(p.field_v_per_cm) || !std::isfinite(p.shift_mhz) || !std::isfinite(p.shift_error_mhz))
            throw ValidationError("non-finite data in linear fit");
        if (p.shift_error_mhz < 0.0) throw ValidationError("negative uncertainty in linear fit");
        if (p.shift_error_mhz == 0.0) ++zero_errors;
    }
    const bool unweighted = zero_errors == points.size();
    if (zero_errors != 0 && !unweighted) throw ValidationError("zero uncertainty mixed with nonzero uncertainties");

    double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : points) {
        const double w = unweighted ? 1.0 : 1.0 / (p.shift_error_mhz * p.shift_error_mhz);
        s += w;
        sx += w * p.field_v_per_cm;
        sy += w * p.shift_mhz;
        sxx += w * p.field_v_per_cm * p.field_v_per_cm;
        sxy += w * p.field_v_per_cm * p.shift_mhz;
    }
    const double det = s * sxx - sx * sx;
    if (!(std::abs(det) > 1e-12 * s * sxx)) throw ValidationError("singular design: all field values identical");
    const double slope = (s * sxy - sx * sy) / det;
    const double intercept = (sxx * sy - sx * sxy) / det;

    double chi2 = 0.0;
    for (const auto& p : points) {
        const double w = unweighted ? 1.0 : 1.0 / (p.shift_error_mhz * p.shift_error_mhz);
        const double d = p.shift_mhz - (slope * p.field_v_per_cm + intercept);
        chi2 += w * d * d;
    }
    const double dof = static_cast<double>(points.size()) - 2.0;
    double var_slope = s / det;
    double var_intercept = sxx / det;
    if (unweighted) {
        const double resid_var = dof > 0 ? chi2 / dof : 0.0;
        var_slope *= resid_var;
        var_intercept *= resid_var;
    }
    FitResult out;
    // MHz per V/cm -> kHz per V/cm
    out.parameters = {{"slope", slope * 1e3, std::sqrt(var_slope) * 1e3},
                      {"intercept", intercept, std::sqrt(var_intercept)}};
    out.chi_square = chi2;
    out.reduced_chi_square = dof > 0 ? chi2 / dof : std::numeric_limits<double>::quiet_NaN();
    out.converged = true;
    return out;
}

G2Estimate estimate_g2_zero(const LagHistogram& histogram) {
    if (histogram.max_lag < 1 ||
        histogram.coincidences.size() != static_cast<std::size_t>(2 * histogram.max_lag + 1))
        throw ValidationError("lag histogram has inconsistent size");
    double side = 0.0;
    int nonzero = 0;
    for (int k = -histogram.max_lag; k <= histogram.max_lag; ++k) {
        if (k == 0) continue;
        const auto c = histogram.at(k);
        side += static_cast<double>(c);
        if (c > 0) ++nonzero;
    }
    if (side == 0.0) throw ValidationError("no side-lag coincidences: normalization undefined");
    if (nonzero < 3) throw ValidationError("need at least 3 nonzero side lags");
    const double n_side = 2.0 * histogram.max_lag;
    const double m = side / n_side;
    const double c0 = static_cast<double>(histogram.at(0));
    const double g = c0 / m;
    const double var = std::max(c0, 1.0) / (m * m) + g * g / (m * n_side);
    return {g, std::sqrt(var)};
}

} // namespace starksim
