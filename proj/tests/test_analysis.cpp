#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "starksim/analysis.hpp"
#include "starksim/errors.hpp"
#include "starksim/random.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace starksim;

namespace {

ScanResult make_scan(const std::vector<std::uint64_t>& counts, double pitch = 5.0) {
    ScanResult s;
    for (std::size_t i = 0; i < counts.size(); ++i) s.points.push_back({pitch * static_cast<double>(i), counts[i], 5.0});
    return s;
}

std::vector<DataPoint> noiseless_lorentzian(double a, double c, double w, double b, double pitch = 5.0,
                                            double half = 100.0) {
    std::vector<DataPoint> pts;
    for (double x = -half; x <= half + 1e-9; x += pitch) pts.push_back({x, lorentzian(x, a, c, w, b)});
    return pts;
}

std::vector<DataPoint> poisson_lorentzian(double a, double c, double w, double b, double pitch, double half,
                                          std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::vector<DataPoint> pts;
    for (double x = -half; x <= half + 1e-9; x += pitch)
        pts.push_back({x, static_cast<double>(std::poisson_distribution<long>(lorentzian(x, a, c, w, b))(rng))});
    return pts;
}

TimeHistogram exact_decay(double a, double tau, double b, std::size_t n = 85) {
    TimeHistogram h;
    h.counts.resize(n);
    for (std::size_t i = 0; i < n; ++i) h.counts[i] = static_cast<std::uint64_t>(std::llround(a * std::exp(-h.bin_center(i) / tau) + b));
    return h;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sd_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

TEST_CASE("find_peaks: flat Poisson background gives no false positives") {
    int clean = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng = make_rng(mix_seed(99, seed));
        std::poisson_distribution<std::uint64_t> bg(8.5);
        std::vector<std::uint64_t> c(1000);
        for (auto& v : c) v = bg(rng);
        clean += find_peaks(make_scan(c), 5.0).empty();
    }
    CHECK(clean >= 990);
}

TEST_CASE("find_peaks: injected peak, zeros and plateaus") {
    Rng rng = make_rng(5);
    std::vector<std::uint64_t> c(81);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double x = 5.0 * static_cast<double>(i);
        c[i] = std::poisson_distribution<std::uint64_t>(lorentzian(x, 20.0 * 10.0, 203.0, 6.7, 10.0))(rng);
    }
    const auto peaks = find_peaks(make_scan(c), 5.0);
    REQUIRE(peaks.size() == 1);
    CHECK(std::abs(peaks[0].center_mhz - 203.0) <= 5.0);
    CHECK(peaks[0].prominence > 5.0 * std::sqrt(10.0));

    CHECK(find_peaks(make_scan(std::vector<std::uint64_t>(50, 0)), 5.0).empty());

    std::vector<std::uint64_t> plateau(30, 1);
    plateau[10] = plateau[11] = 100;
    plateau[20] = 60;
    const auto p = find_peaks(make_scan(plateau), 5.0);
    REQUIRE(p.size() == 2);
    CHECK(p[0].center_mhz == 50.0);
    CHECK(p[1].center_mhz == 100.0);
    CHECK(p[0].height == 100.0);
    CHECK_THROWS_AS(find_peaks(make_scan(plateau), 0.0), ValidationError);
}

TEST_CASE("noiseless Lorentzian is recovered exactly") {
    const auto pts = noiseless_lorentzian(100.0, 0.0, 6.7, 0.0);
    const auto fit = fit_lorentzian(pts);
    CHECK(fit.converged);
    CHECK(std::abs(fit.value("amplitude") / 100.0 - 1.0) < 1e-6);
    CHECK(std::abs(fit.value("center")) < 1e-6);
    CHECK(std::abs(fit.value("fwhm") / 6.7 - 1.0) < 1e-6);
    CHECK(std::abs(fit.value("offset")) < 1e-6);
    CHECK(fit.chi_square < 1e-12);

    const auto shifted = fit_lorentzian(noiseless_lorentzian(250.0, -13.0, 9.0, 7.0, 2.0, 80.0));
    CHECK(shifted.value("center") == doctest::Approx(-13.0).epsilon(1e-8));
    CHECK(shifted.value("fwhm") == doctest::Approx(9.0).epsilon(1e-8));
    CHECK(shifted.value("offset") == doctest::Approx(7.0).epsilon(1e-6));
    CHECK_THROWS_AS(shifted["nope"], std::out_of_range);
}

TEST_CASE("noised Lorentzian fits scatter around the true linewidth") {
    // Peak of ~1000 counts on 8.5 dark counts at 1 MHz pitch.
    std::vector<double> w, pulls;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto fit = fit_lorentzian(poisson_lorentzian(1000.0, 0.0, 6.7, 8.5, 1.0, 40.0, mix_seed(3, seed)));
        w.push_back(fit.value("fwhm"));
        pulls.push_back((fit.value("fwhm") - 6.7) / fit.error("fwhm"));
    }
    CHECK(std::abs(mean_of(w) - 6.7) < 3.0 * sd_of(w) / std::sqrt(200.0) + 0.02);
    CHECK(sd_of(w) < 0.3);
    CHECK(sd_of(pulls) == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("pipeline closure: fitted centres fall within 3 standard errors") {
    int inside = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto fit = fit_lorentzian(poisson_lorentzian(200.0, 3.3, 6.7, 8.5, 5.0, 100.0, mix_seed(11, seed)));
        inside += std::abs(fit.value("center") - 3.3) < 3.0 * fit.error("center");
    }
    CHECK(inside >= 190);
}

TEST_CASE("flat data: rejected or amplitude consistent with zero") {
    std::vector<DataPoint> flat;
    for (int i = 0; i < 20; ++i) flat.push_back({5.0 * i, 10.0});
    CHECK_THROWS_AS(fit_lorentzian(flat), ValidationError);

    int flagged = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto noisy = poisson_lorentzian(0.0, 0.0, 6.7, 8.5, 5.0, 100.0, mix_seed(17, seed));
        try {
            const auto fit = fit_lorentzian(noisy, LorentzianGuess{5.0, 0.0, 6.7, 8.5});
            flagged += std::abs(fit.value("amplitude")) < 3.0 * fit.error("amplitude");
        } catch (const FitConvergenceError&) {
            ++flagged;
        }
    }
    CHECK(flagged >= 47);
}

TEST_CASE("Lorentzian preconditions") {
    CHECK_THROWS_AS(fit_lorentzian(noiseless_lorentzian(10.0, 0.0, 6.7, 1.0, 5.0, 15.0)), ValidationError);  // 7 points
    CHECK_THROWS_AS(fit_lorentzian(noiseless_lorentzian(10.0, 0.0, 6.7, 1.0, 0.5, 2.0), LorentzianGuess{10.0, 0.0, 6.7, 1.0}),
                    ValidationError);
}

TEST_CASE("noiseless exponential is recovered exactly") {
    // Integer counts cannot carry an exact exponential, so fit the residual
    // function directly on real-valued data.
    std::vector<DataPoint> pts;
    for (int i = 0; i < 85; ++i) pts.push_back({i + 0.5, 1000.0 * std::exp(-(i + 0.5) / 41.0) + 20.0});
    Eigen::VectorXd p0(3);
    p0 << 800.0, 30.0, 10.0;
    const auto sol = levenberg_marquardt(exponential_residuals(pts), p0);
    CHECK(sol.converged);
    CHECK(std::abs(sol.params(1) / 41.0 - 1.0) < 1e-6);
    CHECK(std::abs(sol.params(0) / 1000.0 - 1.0) < 1e-6);
    CHECK(std::abs(sol.params(2) / 20.0 - 1.0) < 1e-6);

    // Rounded counts at high amplitude still land very close.
    const auto fit = fit_exponential_decay(exact_decay(1e7, 41.0, 20.0));
    CHECK(fit.value("tau") == doctest::Approx(41.0).epsilon(1e-5));
    const auto fixed = fit_exponential_decay(exact_decay(1e7, 41.0, 20.0), 0.0, 20.0);
    CHECK(fixed.value("tau") == doctest::Approx(41.0).epsilon(1e-5));
    CHECK(fixed.value("background") == 20.0);
    CHECK(fixed.error("background") == 0.0);
}

TEST_CASE("exponential fit start and preconditions") {
    const auto h = exact_decay(1e6, 41.0, 5.0);
    const auto late = fit_exponential_decay(h, 20.0);
    CHECK(late.value("tau") == doctest::Approx(41.0).epsilon(1e-4));
    CHECK_THROWS_AS(fit_exponential_decay(h, 82.0), ValidationError);
    CHECK_THROWS_AS(fit_exponential_decay(h, 0.0, -1.0), ValidationError);
}

TEST_CASE("pure background decay histogram has amplitude consistent with zero") {
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng = make_rng(mix_seed(23, seed));
        TimeHistogram h;
        for (int i = 0; i < 85; ++i) h.counts.push_back(std::poisson_distribution<std::uint64_t>(400.0)(rng));
        try {
            const auto fit = fit_exponential_decay(h, 0.0);
            ok += std::abs(fit.value("amplitude")) < 3.0 * fit.error("amplitude") || fit.value("tau") > 1e3;
        } catch (const FitConvergenceError&) {
            ++ok;
        }
    }
    CHECK(ok >= 47);
}

TEST_CASE("linear fit: exact line, OLS equivalence and singular design") {
    std::vector<LinearPoint> line;
    for (int i = 0; i <= 10; ++i) line.push_back({690.0 * i, 19.8e-3 * 690.0 * i - 148.3, 0.0});
    const auto exact = fit_linear_weighted(line);
    CHECK(exact.value("slope") == doctest::Approx(19.8).epsilon(1e-12));
    CHECK(exact.value("intercept") == doctest::Approx(-148.3).epsilon(1e-12));

    // Equal errors reproduce the closed-form OLS slope.
    Rng rng = make_rng(31);
    std::normal_distribution<double> noise(0.0, 0.4);
    std::vector<LinearPoint> pts;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i <= 10; ++i) {
        const double x = 690.0 * i, y = 0.0198 * x + noise(rng);
        pts.push_back({x, y, 0.4});
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = 11.0;
    const double ols = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const auto fit = fit_linear_weighted(pts);
    CHECK(fit.value("slope") == doctest::Approx(ols * 1e3).epsilon(1e-12));
    CHECK(fit.error("slope") == doctest::Approx(0.4 / std::sqrt(sxx - sx * sx / n) * 1e3).epsilon(1e-10));

    std::vector<LinearPoint> same(4, {100.0, 1.0, 0.1});
    CHECK_THROWS_AS(fit_linear_weighted(same), ValidationError);
    CHECK_THROWS_AS(fit_linear_weighted(std::vector<LinearPoint>{{0, 0, 1}, {1, 1, 1}}), ValidationError);
    CHECK_THROWS_AS(fit_linear_weighted(std::vector<LinearPoint>{{0, 0, 1}, {1, 1, 0}, {2, 2, 1}}), ValidationError);
}

TEST_CASE("linear fit: ion-1 style data and the six-ion ensemble") {
    const std::vector<double> truth{19.8, 26.4791, 11.4, 24.2, 23.1111, 15.0098};
    CHECK(mean_of(truth) == doctest::Approx(20.0).epsilon(1e-4));
    CHECK(sd_of(truth) == doctest::Approx(5.8).epsilon(1e-4));

    std::vector<double> fitted;
    std::size_t k = 0;
    for (double s : truth) {
        Rng rng = make_rng(mix_seed(37, k++));
        std::normal_distribution<double> noise(0.0, 0.3);
        std::vector<LinearPoint> pts;
        for (int i = 0; i <= 10; ++i) {
            const double e = 690.76 * i;
            pts.push_back({e, s * 1e-3 * e + noise(rng), 0.3});
        }
        const auto fit = fit_linear_weighted(pts);
        CHECK(std::abs(fit.value("slope") - s) < 3.0 * fit.error("slope"));
        CHECK(fit.error("slope") < 0.5);
        fitted.push_back(fit.value("slope"));
    }
    CHECK(mean_of(fitted) == doctest::Approx(20.0).epsilon(0.01));
    CHECK(sd_of(fitted) == doctest::Approx(5.8).epsilon(0.02));
}

TEST_CASE("g2 estimator") {
    LagHistogram h;
    h.max_lag = 3;
    h.coincidences = {100, 100, 100, 0, 100, 100, 100};
    auto g = estimate_g2_zero(h);
    CHECK(g.g2_zero == 0.0);
    CHECK(std::isfinite(g.standard_error));
    CHECK(g.standard_error > 0.0);

    h.coincidences = {50, 50, 50, 50, 50, 50, 50};
    CHECK(estimate_g2_zero(h).g2_zero == doctest::Approx(1.0));

    h.coincidences = {40, 60, 50, 10, 50, 45, 55};
    const auto base = estimate_g2_zero(h);
    for (auto& c : h.coincidences) c *= 7;
    CHECK(estimate_g2_zero(h).g2_zero == doctest::Approx(base.g2_zero).epsilon(1e-14));

    h.coincidences = {0, 0, 0, 5, 0, 0, 0};
    CHECK_THROWS_AS(estimate_g2_zero(h), ValidationError);
    h.coincidences = {0, 0, 4, 5, 4, 0, 0};
    CHECK_THROWS_AS(estimate_g2_zero(h), ValidationError);
}

TEST_CASE("objective gradients match central differences") {
    Rng rng = make_rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const bool lorentz = trial % 2 == 0;
        std::vector<DataPoint> data;
        Eigen::VectorXd p(lorentz ? 4 : 3);
        if (lorentz) {
            data = poisson_lorentzian(50.0 + 500.0 * u(rng), 10.0 * (u(rng) - 0.5), 3.0 + 8.0 * u(rng), 10.0 * u(rng),
                                      2.0, 40.0, mix_seed(43, trial));
            p << 50.0 + 500.0 * u(rng), 10.0 * (u(rng) - 0.5), 3.0 + 8.0 * u(rng), 10.0 * u(rng);
        } else {
            for (int i = 0; i < 85; ++i) data.push_back({i + 0.5, std::round(800.0 * std::exp(-(i + 0.5) / 41.0) + 20.0 * u(rng))});
            p << 200.0 + 1000.0 * u(rng), 20.0 + 40.0 * u(rng), 30.0 * u(rng);
        }
        const auto f = lorentz ? lorentzian_residuals(data) : exponential_residuals(data);
        const Eigen::VectorXd g = objective_gradient(f, p);
        for (Eigen::Index k = 0; k < p.size(); ++k) {
            const double h = 1e-6 * std::max(std::abs(p(k)), 1.0);
            Eigen::VectorXd a = p, b = p;
            a(k) += h;
            b(k) -= h;
            const double fd = (objective(f, a) - objective(f, b)) / (2.0 * h);
            const double scale = std::max(std::abs(g(k)), 1e-6 * g.norm());
            CHECK(std::abs(fd - g(k)) / scale < 1e-4);
        }
    }
}

TEST_CASE("fits are invariant under rescaling the counts") {
    const auto pts = poisson_lorentzian(300.0, 2.0, 6.7, 10.0, 2.0, 40.0, 47);
    std::vector<DataPoint> scaled = pts;
    for (auto& p : scaled) p.y *= 4.0;
    const auto a = fit_lorentzian(pts);
    const auto b = fit_lorentzian(scaled);
    CHECK(b.value("center") == doctest::Approx(a.value("center")).epsilon(1e-6));
    CHECK(b.value("fwhm") == doctest::Approx(a.value("fwhm")).epsilon(1e-6));
    CHECK(b.value("amplitude") == doctest::Approx(4.0 * a.value("amplitude")).epsilon(1e-6));
    CHECK(b.value("offset") == doctest::Approx(4.0 * a.value("offset")).epsilon(1e-6));

    const auto h = exact_decay(5000.0, 41.0, 30.0);
    TimeHistogram h3 = h;
    for (auto& c : h3.counts) c *= 3;
    CHECK(fit_exponential_decay(h3).value("tau") == doctest::Approx(fit_exponential_decay(h).value("tau")).epsilon(1e-6));
}

TEST_CASE("optimizer reports non-convergence with its last parameters") {
    const auto f = lorentzian_residuals(noiseless_lorentzian(100.0, 0.0, 6.7, 0.0));
    LevenbergMarquardtOptions opt;
    opt.max_iterations = 1;
    Eigen::VectorXd p0(4);
    p0 << 10.0, 30.0, 50.0, 5.0;
    try {
        levenberg_marquardt(f, p0, opt);
        FAIL("expected non-convergence");
    } catch (const FitConvergenceError& e) {
        CHECK(e.last_params().size() == 4);
    }
}
