#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "starksim/electrostatics.hpp"
#include "starksim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace starksim;

namespace {

// Complete elliptic integral of the first kind by the arithmetic-geometric mean.
double elliptic_k(double k) {
    double a = 1.0, b = std::sqrt(1.0 - k * k);
    for (int i = 0; i < 40; ++i) {
        const double an = 0.5 * (a + b);
        b = std::sqrt(a * b);
        a = an;
    }
    return std::numbers::pi / (2.0 * a);
}

ElectrodeLayout paper_layout(double volts) {
    ElectrodeLayout l;
    l.electrode_potentials_v = {0.5 * volts, -0.5 * volts};
    return l;
}

// Frozen from the converged grid (2.5 um nominal spacing, default grading,
// tolerance 1e-6 V).
constexpr double kGoldenCenterField333 = 21025.7052;

} // namespace

TEST_CASE("uniform field oracle") {
    CHECK(uniform_field_oracle(100.0, 100.0) == doctest::Approx(1e4));
    CHECK(uniform_field_oracle(0.0, 37.0) == 0.0);
    CHECK(uniform_field_oracle(333.0, 100.0) == doctest::Approx(33300.0));
    CHECK_THROWS_AS(uniform_field_oracle(1.0, 0.0), ValidationError);
}

TEST_CASE("parallel plates give a uniform field") {
    for (const DielectricMap d : {DielectricMap{1.0, 1.0}, DielectricMap{1.0, 9.0}}) {
        const auto grid = relax(make_parallel_plate_problem(100.0, 100.0, 200.0, 2.5, d), SolverOptions{});
        for (double x : {-30.0, 0.0, 25.0})
            for (double y : {-60.0, -5.0, 0.0, 40.0}) {
                const auto f = field_at(grid, {x, y});
                CHECK(std::abs(f.parallel_v_per_cm / 1e4 - 1.0) < 1e-3);
                CHECK(std::abs(f.perpendicular_v_per_cm) < 10.0);
            }
    }
}

TEST_CASE("zero potentials give zero everywhere") {
    const auto grid = solve_potential(paper_layout(0.0), DielectricMap{}, 5.0);
    CHECK(*std::max_element(grid.values().begin(), grid.values().end()) == 0.0);
    CHECK(*std::min_element(grid.values().begin(), grid.values().end()) == 0.0);
    const auto f = field_at(grid, {10.0, -20.0});
    CHECK(f.parallel_v_per_cm == 0.0);
    CHECK(f.perpendicular_v_per_cm == 0.0);
}

TEST_CASE("field_at differentiates exactly on linear and constant grids") {
    std::vector<double> xs, ys;
    for (int i = 0; i <= 20; ++i) xs.push_back(-10.0 + i * (i < 10 ? 0.7 : 1.3));
    for (int j = 0; j <= 10; ++j) ys.push_back(-5.0 + j);
    PotentialGrid ramp(xs, ys, 1.0, BoundaryCondition::dirichlet_zero);
    PotentialGrid flat(xs, ys, 1.0, BoundaryCondition::dirichlet_zero);
    for (std::size_t j = 0; j < ramp.ny(); ++j)
        for (std::size_t i = 0; i < ramp.nx(); ++i) {
            ramp(i, j) = ramp.x_of(i);  // 1 V/um
            flat(i, j) = 3.0;
        }
    for (double x : {-8.0, -1.1, 0.0, 4.2, 10.0}) {
        const auto f = field_at(ramp, {x, 0.5});
        CHECK(f.parallel_v_per_cm == doctest::Approx(-1e4).epsilon(1e-12));
        CHECK(f.perpendicular_v_per_cm == doctest::Approx(0.0));
        const auto z = field_at(flat, {x, 0.5});
        CHECK(std::abs(z.parallel_v_per_cm) < 1e-9);
        CHECK(std::abs(z.perpendicular_v_per_cm) < 1e-9);
    }
    CHECK_THROWS_AS(field_at(ramp, {xs.front(), 0.0}), RangeError);
    CHECK_THROWS_AS(field_at(ramp, {0.0, 100.0}), RangeError);
}

TEST_CASE("gap-centre field: golden value, analytic strip limit and uniform bound") {
    const auto grid = solve_potential(paper_layout(333.0), DielectricMap{}, 2.5);
    const auto f = field_at(grid, {0.0, 0.0});
    CHECK(f.parallel_v_per_cm == doctest::Approx(kGoldenCenterField333).epsilon(1e-5));
    CHECK(std::abs(f.perpendicular_v_per_cm) < 1e-3);

    const double k = 100.0 / (100.0 + 2.0 * 200.0);
    const double analytic = 333.0 / (100.0 * elliptic_k(k)) * 1e4;
    CHECK(std::abs(f.parallel_v_per_cm / analytic - 1.0) < 5e-3);
    CHECK(coplanar_strip_center_field(333.0, 100.0, 200.0) == doctest::Approx(analytic).epsilon(1e-12));

    CHECK(f.parallel_v_per_cm < uniform_field_oracle(333.0, 100.0));

    // Cavity positions away from the gap centre see less field.
    for (const Point2 p : {Point2{0.0, -125.0}, Point2{350.0, -50.0}, Point2{0.0, 60.0}}) {
        const auto g = field_at(grid, p);
        CHECK(std::hypot(g.parallel_v_per_cm, g.perpendicular_v_per_cm) < f.parallel_v_per_cm);
    }
}

TEST_CASE("grid refinement converges below 0.5 percent per halving") {
    ElectrodeLayout l = paper_layout(333.0);
    const auto steps = refine_probe_field(l, DielectricMap{}, 5.0, 5e-3, 3);
    REQUIRE(steps.size() >= 2);
    CHECK(steps.back().relative_change < 5e-3);
    CHECK(steps.back().field.parallel_v_per_cm == doctest::Approx(kGoldenCenterField333).epsilon(1e-4));
    for (std::size_t i = 2; i < steps.size(); ++i) CHECK(steps[i].relative_change < steps[i - 1].relative_change);
}

TEST_CASE("outer boundary is far enough: doubling the domain moves the field < 0.2 percent") {
    ElectrodeLayout small = paper_layout(333.0);
    ElectrodeLayout big = small;
    big.domain_width_um *= 2.0;
    big.domain_height_um *= 2.0;
    const double a = field_at(solve_potential(small, DielectricMap{}, 5.0), {0.0, 0.0}).parallel_v_per_cm;
    const double b = field_at(solve_potential(big, DielectricMap{}, 5.0), {0.0, 0.0}).parallel_v_per_cm;
    CHECK(std::abs(a / b - 1.0) < 2e-3);
}

TEST_CASE("linearity under voltage doubling") {
    SolverOptions opt;
    opt.tolerance_v = 1e-9;
    const auto g1 = solve_potential(paper_layout(100.0), DielectricMap{}, 5.0, opt);
    const auto g2 = solve_potential(paper_layout(200.0), DielectricMap{}, 5.0, opt);
    REQUIRE(g1.values().size() == g2.values().size());
    double worst = 0.0;
    for (std::size_t k = 0; k < g1.values().size(); ++k)
        worst = std::max(worst, std::abs(g2.values()[k] - 2.0 * g1.values()[k]));
    // Each solve stops within ~tolerance/(1 - rho) of its fixed point.
    CHECK(worst < 1e-5);
    const auto f1 = field_at(g1, {20.0, -40.0});
    const auto f2 = field_at(g2, {20.0, -40.0});
    CHECK(f2.parallel_v_per_cm == doctest::Approx(2.0 * f1.parallel_v_per_cm).epsilon(1e-7));
    CHECK(f2.perpendicular_v_per_cm == doctest::Approx(2.0 * f1.perpendicular_v_per_cm).epsilon(1e-6));
}

TEST_CASE("antisymmetric drive gives an antisymmetric potential") {
    const auto g = solve_potential(paper_layout(50.0), DielectricMap{}, 5.0);
    for (double x : {10.0, 75.0, 180.0, 400.0})
        for (double y : {-100.0, -3.0, 0.0, 20.0, 250.0})
            CHECK(std::abs(g.potential_at({x, y}) + g.potential_at({-x, y})) < 1e-4);
}

TEST_CASE("electrodes stay pinned and the maximum principle holds on random layouts") {
    std::mt19937_64 rng(20240611);
    std::uniform_real_distribution<double> width(50.0, 300.0), gap(40.0, 150.0), volts(-100.0, 100.0),
        margin(2.0, 4.0), frac(-0.45, 0.45);
    for (int trial = 0; trial < 100; ++trial) {
        ElectrodeLayout l;
        l.electrode_width_um = width(rng);
        l.gap_um = gap(rng);
        l.electrode_potentials_v = {volts(rng), volts(rng)};
        l.domain_width_um = l.span_um() + 2.0 * margin(rng) * l.gap_um;
        l.domain_height_um = 2.0 * margin(rng) * l.gap_um;
        l.probe = {frac(rng) * l.span_um(), frac(rng) * l.domain_height_um};
        const DielectricMap d{1.0 + 3.0 * std::abs(frac(rng)), 1.0 + 20.0 * std::abs(frac(rng))};
        SolverOptions opt;
        opt.tolerance_v = 1e-4;
        const auto g = solve_potential(l, d, l.gap_um / 20.0, opt);

        const double lo = std::min({0.0, l.electrode_potentials_v.first, l.electrode_potentials_v.second});
        const double hi = std::max({0.0, l.electrode_potentials_v.first, l.electrode_potentials_v.second});
        const auto [mn, mx] = std::minmax_element(g.values().begin(), g.values().end());
        CHECK(*mn >= lo - 1e-12);
        CHECK(*mx <= hi + 1e-12);

        // Electrode interiors on the surface hold their potentials.
        const double mid = 0.5 * l.gap_um + 0.5 * l.electrode_width_um;
        CHECK(std::abs(g.potential_at({-mid, 0.0}) - l.electrode_potentials_v.first) < 1e-12);
        CHECK(std::abs(g.potential_at({mid, 0.0}) - l.electrode_potentials_v.second) < 1e-12);
    }
}

TEST_CASE("invalid geometry and solver limits") {
    ElectrodeLayout l = paper_layout(10.0);
    CHECK_THROWS_AS(solve_potential(l, DielectricMap{}, 6.0), ValidationError);  // > gap/20
    ElectrodeLayout tight = l;
    tight.domain_width_um = tight.span_um() + 100.0;
    CHECK_THROWS_AS(solve_potential(tight, DielectricMap{}, 5.0), ValidationError);
    ElectrodeLayout outside = l;
    outside.probe = {0.0, 5000.0};
    CHECK_THROWS_AS(solve_potential(outside, DielectricMap{}, 5.0), ValidationError);
    ElectrodeLayout no_gap = l;
    no_gap.gap_um = 0.0;
    CHECK_THROWS_AS(solve_potential(no_gap, DielectricMap{}, 5.0), ValidationError);
    CHECK_THROWS_AS(solve_potential(l, DielectricMap{0.5, 9.0}, 5.0), ValidationError);

    SolverOptions few;
    few.max_iterations = 5;
    try {
        solve_potential(l, DielectricMap{}, 5.0, few);
        FAIL("expected non-convergence");
    } catch (const ConvergenceError& e) {
        CHECK(e.last_residual() > few.tolerance_v);
    }
}

TEST_CASE("graded axis passes through features and stays monotone") {
    const std::vector<double> features{-250.0, -50.0, 50.0, 250.0};
    const auto xs = graded_axis(-1250.0, 1250.0, features, 2.5, 350.0, MeshGrading{});
    CHECK(xs.front() == -1250.0);
    CHECK(xs.back() == 1250.0);
    for (std::size_t i = 1; i < xs.size(); ++i) CHECK(xs[i] > xs[i - 1]);
    for (double f : features) CHECK(std::find(xs.begin(), xs.end(), f) != xs.end());
}
