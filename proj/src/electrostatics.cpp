#include "starksim/electrostatics.hpp"

#include "starksim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numbers>

namespace starksim {

namespace {

constexpr double kUmPerCm = 1e4;

std::size_t cells_for(double length, double spacing, const char* what) {
    const double n = length / spacing;
    const double rounded = std::round(n);
    if (rounded < 1.0 || std::abs(n - rounded) > 1e-6 * std::max(1.0, n))
        throw ValidationError(fmt::format("{} ({} um) is not a multiple of the grid spacing ({} um)",
                                          what, length, spacing));
    return static_cast<std::size_t>(rounded);
}

std::vector<double> uniform_axis(double lo, std::size_t cells, double spacing) {
    std::vector<double> xs(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) xs[i] = lo + spacing * static_cast<double>(i);
    return xs;
}

// Index of the cell [xs[k], xs[k+1]] containing x, clamped to valid cells.
std::size_t locate(const std::vector<double>& xs, double x) {
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    std::size_t k = it == xs.begin() ? 0 : static_cast<std::size_t>(it - xs.begin()) - 1;
    return std::min(k, xs.size() - 2);
}

// Three-point first derivative on a non-uniform stencil.
double derivative(double hm, double hp, double fm, double f0, double fp) {
    return (hm * hm * fp - hp * hp * fm + (hp * hp - hm * hm) * f0) / (hp * hm * (hp + hm));
}

double optimal_relaxation(const PotentialGrid& g) {
    // Jacobi spectral radius of the model problem; zero-flux edges behave
    // like a doubled Dirichlet extent. Strongly graded meshes relax like a
    // finer uniform mesh, the factor 2.5 is empirical.
    const std::size_t nx = g.nx();
    const std::size_t ny = g.ny();
    const double graded = g.min_spacing_um() < 0.5 * g.spacing_um() ? 2.5 : 1.0;
    const double scale = graded * (g.boundary_condition() == BoundaryCondition::neumann_zero ? 2.0 : 1.0);
    const double rx = std::cos(std::numbers::pi / (scale * static_cast<double>(nx - 1)));
    const double ry = std::cos(std::numbers::pi / (scale * static_cast<double>(ny - 1)));
    const double rho = 0.5 * (rx + ry);
    return 2.0 / (1.0 + std::sqrt(1.0 - rho * rho));
}

} // namespace

void ElectrodeLayout::validate() const {
    if (!(gap_um > 0.0)) throw ValidationError("layout: gap must be positive");
    if (!(electrode_width_um > 0.0)) throw ValidationError("layout: electrode width must be positive");
    if (!std::isfinite(electrode_potentials_v.first) || !std::isfinite(electrode_potentials_v.second))
        throw ValidationError("layout: electrode potentials must be finite");
    const double half_w = 0.5 * domain_width_um;
    const double half_h = 0.5 * domain_height_um;
    const double margin = 2.0 * gap_um;
    if (!(half_w >= 0.5 * span_um() + margin) || !(half_h >= margin))
        throw ValidationError(fmt::format(
            "layout: domain {} x {} um must enclose the electrodes with a margin of at least {} um",
            domain_width_um, domain_height_um, margin));
    if (!(std::abs(probe.x_um) < half_w) || !(std::abs(probe.y_um) < half_h))
        throw ValidationError("layout: probe point lies outside the domain");
}

void DielectricMap::validate() const {
    if (!(relative_permittivity_above >= 1.0) || !(relative_permittivity_below >= 1.0))
        throw ValidationError("dielectric: relative permittivities must be >= 1");
}

PotentialGrid::PotentialGrid(std::vector<double> xs_um, std::vector<double> ys_um,
                             double nominal_spacing_um, BoundaryCondition boundary)
    : xs_(std::move(xs_um)), ys_(std::move(ys_um)), spacing_(nominal_spacing_um), boundary_(boundary),
      values_(xs_.size() * ys_.size(), 0.0) {}

double PotentialGrid::min_spacing_um() const {
    double h = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < xs_.size(); ++i) h = std::min(h, xs_[i] - xs_[i - 1]);
    for (std::size_t j = 1; j < ys_.size(); ++j) h = std::min(h, ys_[j] - ys_[j - 1]);
    return h;
}

double PotentialGrid::potential_at(Point2 p) const {
    const double tol = 1e-9 * spacing_;
    if (p.x_um < xs_.front() - tol || p.x_um > xs_.back() + tol || p.y_um < ys_.front() - tol ||
        p.y_um > ys_.back() + tol)
        throw RangeError("potential_at: point outside grid");
    const std::size_t i0 = locate(xs_, p.x_um);
    const std::size_t j0 = locate(ys_, p.y_um);
    const double tx = std::clamp((p.x_um - xs_[i0]) / (xs_[i0 + 1] - xs_[i0]), 0.0, 1.0);
    const double ty = std::clamp((p.y_um - ys_[j0]) / (ys_[j0 + 1] - ys_[j0]), 0.0, 1.0);
    const auto& g = *this;
    return (1 - tx) * (1 - ty) * g(i0, j0) + tx * (1 - ty) * g(i0 + 1, j0) +
           (1 - tx) * ty * g(i0, j0 + 1) + tx * ty * g(i0 + 1, j0 + 1);
}

std::vector<double> graded_axis(double lo, double hi, const std::vector<double>& features,
                                double nominal_spacing, double near_half_extent, const MeshGrading& grading) {
    const double h_edge = nominal_spacing / grading.edge_ratio;
    const double h_far = nominal_spacing * grading.far_ratio;
    auto local_spacing = [&](double x) {
        double d = std::numeric_limits<double>::infinity();
        for (double f : features) d = std::min(d, std::abs(x - f));
        const double outside = std::max(0.0, std::abs(x) - near_half_extent);
        return std::min({h_edge + grading.growth * d, nominal_spacing + grading.growth * outside, h_far});
    };

    std::vector<double> breaks{lo, hi};
    for (double f : features)
        if (f > lo && f < hi) breaks.push_back(f);
    std::sort(breaks.begin(), breaks.end());

    // Within each segment, place nodes at equal increments of the stretched
    // coordinate F(x) = integral of dx / h(x).
    std::vector<double> xs{lo};
    for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
        const double a = breaks[s];
        const double b = breaks[s + 1];
        const auto samples = static_cast<std::size_t>(std::ceil(4.0 * (b - a) / h_edge)) + 1;
        std::vector<double> f(samples + 1, 0.0);
        const double dx = (b - a) / static_cast<double>(samples);
        for (std::size_t k = 0; k < samples; ++k) {
            const double x = a + (static_cast<double>(k) + 0.5) * dx;
            f[k + 1] = f[k] + dx / local_spacing(x);
        }
        const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(f.back() - 1e-9)));
        std::size_t k = 0;
        for (std::size_t m = 1; m < n; ++m) {
            const double target = f.back() * static_cast<double>(m) / static_cast<double>(n);
            while (f[k + 1] < target) ++k;
            const double t = (target - f[k]) / (f[k + 1] - f[k]);
            xs.push_back(a + (static_cast<double>(k) + t) * dx);
        }
        xs.push_back(b);
    }
    return xs;
}

LaplaceProblem make_coplanar_problem(const ElectrodeLayout& layout, const DielectricMap& dielectric,
                                     double spacing_um, BoundaryCondition boundary, const MeshGrading& grading) {
    layout.validate();
    dielectric.validate();
    if (!(spacing_um > 0.0) || spacing_um > layout.gap_um / 20.0 * (1.0 + 1e-12))
        throw ValidationError(fmt::format("grid spacing {} um must be positive and at most gap/20 = {} um",
                                          spacing_um, layout.gap_um / 20.0));

    const double half_w = 0.5 * layout.domain_width_um;
    const double half_h = 0.5 * layout.domain_height_um;
    const double inner = 0.5 * layout.gap_um;
    const double outer = inner + layout.electrode_width_um;

    std::vector<double> xs;
    std::vector<double> ys;
    if (grading.enabled) {
        if (!(grading.edge_ratio >= 1.0) || !(grading.far_ratio >= 1.0) || !(grading.growth > 0.0))
            throw ValidationError("mesh grading: ratios must be >= 1 and growth positive");
        xs = graded_axis(-half_w, half_w, {-outer, -inner, inner, outer}, spacing_um,
                         outer + layout.gap_um, grading);
        ys = graded_axis(-half_h, half_h, {0.0}, spacing_um,
                         std::abs(layout.probe.y_um) + layout.gap_um, grading);
    } else {
        xs = uniform_axis(-half_w, 2 * cells_for(half_w, spacing_um, "half domain width"), spacing_um);
        ys = uniform_axis(-half_h, 2 * cells_for(half_h, spacing_um, "half domain height"), spacing_um);
        const double tol = 1e-6 * spacing_um;
        for (double edge : {inner, outer})
            if (std::abs(edge / spacing_um - std::round(edge / spacing_um)) * spacing_um > tol)
                throw ValidationError("electrode edges must fall on grid nodes");
    }

    const std::size_t nx = xs.size();
    const std::size_t ny = ys.size();
    const auto j0 = static_cast<std::size_t>(std::lower_bound(ys.begin(), ys.end(), -1e-9 * spacing_um) - ys.begin());

    LaplaceProblem p;
    p.grid = PotentialGrid(std::move(xs), std::move(ys), spacing_um, boundary);
    p.pinned.assign(nx * ny, 0);
    p.cell_row_permittivity.assign(ny - 1, dielectric.relative_permittivity_above);
    for (std::size_t j = 0; j < j0; ++j) p.cell_row_permittivity[j] = dielectric.relative_permittivity_below;

    if (boundary == BoundaryCondition::dirichlet_zero) {
        for (std::size_t i = 0; i < nx; ++i) p.pinned[i] = p.pinned[(ny - 1) * nx + i] = 1;
        for (std::size_t j = 0; j < ny; ++j) p.pinned[j * nx] = p.pinned[j * nx + nx - 1] = 1;
    }

    // Electrodes are equipotential segments on the interface row.
    const double eps = 1e-9 * spacing_um;
    for (std::size_t i = 0; i < nx; ++i) {
        const double x = p.grid.x_of(i);
        const double ax = std::abs(x);
        if (ax < inner - eps || ax > outer + eps) continue;
        p.pinned[j0 * nx + i] = 1;
        p.grid(i, j0) = x < 0.0 ? layout.electrode_potentials_v.first : layout.electrode_potentials_v.second;
    }
    return p;
}

LaplaceProblem make_parallel_plate_problem(double voltage, double gap_um, double height_um,
                                           double spacing_um, const DielectricMap& dielectric) {
    dielectric.validate();
    if (!(gap_um > 0.0) || !(height_um > 0.0) || !(spacing_um > 0.0))
        throw ValidationError("parallel plate: gap, height and spacing must be positive");
    const std::size_t half_ny = cells_for(0.5 * height_um, spacing_um, "half plate height");
    auto xs = uniform_axis(-0.5 * gap_um, cells_for(gap_um, spacing_um, "plate gap"), spacing_um);
    auto ys = uniform_axis(-0.5 * height_um, 2 * half_ny, spacing_um);
    const std::size_t nx = xs.size();
    const std::size_t ny = ys.size();

    LaplaceProblem p;
    p.grid = PotentialGrid(std::move(xs), std::move(ys), spacing_um, BoundaryCondition::neumann_zero);
    p.pinned.assign(nx * ny, 0);
    p.cell_row_permittivity.assign(ny - 1, dielectric.relative_permittivity_above);
    for (std::size_t j = 0; j < half_ny; ++j) p.cell_row_permittivity[j] = dielectric.relative_permittivity_below;
    for (std::size_t j = 0; j < ny; ++j) {
        p.pinned[j * nx] = p.pinned[j * nx + nx - 1] = 1;
        p.grid(0, j) = voltage;
        p.grid(nx - 1, j) = 0.0;
    }
    return p;
}

PotentialGrid relax(LaplaceProblem problem, const SolverOptions& options, const PotentialGrid* initial_guess) {
    if (!(options.tolerance_v > 0.0)) throw ValidationError("solver tolerance must be positive");
    PotentialGrid& g = problem.grid;
    const std::size_t nx = g.nx();
    const std::size_t ny = g.ny();
    if (nx < 3 || ny < 3) throw ValidationError("grid must have at least 3 x 3 nodes");
    if (problem.pinned.size() != nx * ny || problem.cell_row_permittivity.size() != ny - 1)
        throw ValidationError("problem arrays do not match the grid shape");

    double omega = options.relaxation_factor;
    if (omega == 0.0) omega = optimal_relaxation(g);
    if (!(omega > 0.0 && omega < 2.0)) throw ValidationError("relaxation factor must lie in (0, 2)");

    if (initial_guess != nullptr) {
        if (initial_guess->nx() != nx || initial_guess->ny() != ny)
            throw ValidationError("initial guess shape does not match the problem grid");
        for (std::size_t k = 0; k < nx * ny; ++k)
            if (!problem.pinned[k]) g.values()[k] = initial_guess->values()[k];
    }

    // Finite-volume coefficients. Face lengths are half-sums of adjacent
    // spacings; the horizontal face of a node row straddles two permittivity
    // rows. Missing neighbours (outer boundary) contribute no flux.
    const auto& xs = g.xs();
    const auto& ys = g.ys();
    const auto& eps = problem.cell_row_permittivity;
    std::vector<double> inv_dx_w(nx, 0.0), inv_dx_e(nx, 0.0), face_x(nx, 0.0);
    for (std::size_t i = 0; i < nx; ++i) {
        const double w = i > 0 ? xs[i] - xs[i - 1] : 0.0;
        const double e = i + 1 < nx ? xs[i + 1] - xs[i] : 0.0;
        inv_dx_w[i] = i > 0 ? 1.0 / w : 0.0;
        inv_dx_e[i] = i + 1 < nx ? 1.0 / e : 0.0;
        face_x[i] = 0.5 * (w + e);
    }
    std::vector<double> cond_s(ny, 0.0), cond_n(ny, 0.0), face_y(ny, 0.0);
    for (std::size_t j = 0; j < ny; ++j) {
        const double s = j > 0 ? ys[j] - ys[j - 1] : 0.0;
        const double n = j + 1 < ny ? ys[j + 1] - ys[j] : 0.0;
        cond_s[j] = j > 0 ? eps[j - 1] / s : 0.0;
        cond_n[j] = j + 1 < ny ? eps[j] / n : 0.0;
        face_y[j] = 0.5 * ((j > 0 ? eps[j - 1] * s : 0.0) + (j + 1 < ny ? eps[j] * n : 0.0));
    }

    const std::vector<char>& pinned = problem.pinned;
    std::vector<double>& phi = g.values();
    const bool neumann = g.boundary_condition() == BoundaryCondition::neumann_zero;

    auto update = [&](std::size_t i, std::size_t j) {
        const std::size_t k = j * nx + i;
        const double we = face_y[j] * inv_dx_e[i];
        const double ww = face_y[j] * inv_dx_w[i];
        const double wn = face_x[i] * cond_n[j];
        const double ws = face_x[i] * cond_s[j];
        double num = 0.0;
        if (i + 1 < nx) num += we * phi[k + 1];
        if (i > 0) num += ww * phi[k - 1];
        if (j + 1 < ny) num += wn * phi[k + nx];
        if (j > 0) num += ws * phi[k - nx];
        const double delta = omega * (num / (we + ww + wn + ws) - phi[k]);
        phi[k] += delta;
        return std::abs(delta);
    };

    double max_update = std::numeric_limits<double>::infinity();
    std::size_t iter = 0;
    for (; iter < options.max_iterations; ++iter) {
        max_update = 0.0;
        for (std::size_t colour = 0; colour < 2; ++colour) {
            for (std::size_t j = 1; j + 1 < ny; ++j) {
                const double fy = face_y[j];
                const double cn = cond_n[j];
                const double cs = cond_s[j];
                const std::size_t row = j * nx;
                for (std::size_t i = 1 + ((j + colour + 1) & 1U); i + 1 < nx; i += 2) {
                    const std::size_t k = row + i;
                    if (pinned[k]) continue;
                    const double we = fy * inv_dx_e[i];
                    const double ww = fy * inv_dx_w[i];
                    const double wn = face_x[i] * cn;
                    const double ws = face_x[i] * cs;
                    const double target =
                        (we * phi[k + 1] + ww * phi[k - 1] + wn * phi[k + nx] + ws * phi[k - nx]) /
                        (we + ww + wn + ws);
                    const double delta = omega * (target - phi[k]);
                    phi[k] += delta;
                    max_update = std::max(max_update, std::abs(delta));
                }
            }
            if (!neumann) continue;
            for (std::size_t j = 0; j < ny; ++j) {
                const bool edge_row = j == 0 || j + 1 == ny;
                for (std::size_t i = 0; i < nx; ++i) {
                    if (!edge_row && i != 0 && i + 1 != nx) continue;
                    if (((i + j) & 1U) != colour || pinned[j * nx + i]) continue;
                    max_update = std::max(max_update, update(i, j));
                }
            }
        }
        if (max_update < options.tolerance_v) break;
    }
    g.iterations = std::min(iter + 1, options.max_iterations);
    g.last_update_v = max_update;
    if (!(max_update < options.tolerance_v))
        throw ConvergenceError(fmt::format("SOR did not converge in {} iterations (last update {:.3e} V)",
                                           options.max_iterations, max_update),
                               max_update);
    return std::move(problem.grid);
}

PotentialGrid solve_potential(const ElectrodeLayout& layout, const DielectricMap& dielectric,
                              double spacing_um, const SolverOptions& options, const MeshGrading& grading) {
    return relax(make_coplanar_problem(layout, dielectric, spacing_um, options.boundary, grading), options);
}

FieldVector field_at(const PotentialGrid& grid, Point2 point) {
    const auto& xs = grid.xs();
    const auto& ys = grid.ys();
    const std::size_t nx = grid.nx();
    const std::size_t ny = grid.ny();
    const double tol = 1e-9 * grid.spacing_um();
    if (nx < 4 || ny < 4 || !(point.x_um >= xs[1] - tol && point.x_um <= xs[nx - 2] + tol &&
                              point.y_um >= ys[1] - tol && point.y_um <= ys[ny - 2] + tol))
        throw RangeError(fmt::format("field_at: point ({}, {}) um is not at least one cell inside the grid",
                                     point.x_um, point.y_um));
    const std::size_t i0 = std::clamp<std::size_t>(locate(xs, point.x_um), 1, nx - 3);
    const std::size_t j0 = std::clamp<std::size_t>(locate(ys, point.y_um), 1, ny - 3);
    const double tx = std::clamp((point.x_um - xs[i0]) / (xs[i0 + 1] - xs[i0]), 0.0, 1.0);
    const double ty = std::clamp((point.y_um - ys[j0]) / (ys[j0 + 1] - ys[j0]), 0.0, 1.0);

    double ex = 0.0;
    double ey = 0.0;
    for (std::size_t dj = 0; dj < 2; ++dj) {
        for (std::size_t di = 0; di < 2; ++di) {
            const std::size_t i = i0 + di;
            const std::size_t j = j0 + dj;
            const double w = (di ? tx : 1.0 - tx) * (dj ? ty : 1.0 - ty);
            ex += w * derivative(xs[i] - xs[i - 1], xs[i + 1] - xs[i], grid(i - 1, j), grid(i, j), grid(i + 1, j));
            ey += w * derivative(ys[j] - ys[j - 1], ys[j + 1] - ys[j], grid(i, j - 1), grid(i, j), grid(i, j + 1));
        }
    }
    return {-ex * kUmPerCm, -ey * kUmPerCm};
}

double uniform_field_oracle(double voltage, double gap_um) {
    if (!(gap_um > 0.0)) throw ValidationError("gap must be positive");
    return voltage / gap_um * kUmPerCm;
}

double coplanar_strip_center_field(double voltage, double gap_um, double electrode_width_um) {
    const double k = gap_um / (gap_um + 2.0 * electrode_width_um);
    return voltage / (gap_um * std::comp_ellint_1(k)) * kUmPerCm;
}

PotentialGrid prolong(const PotentialGrid& coarse, const PotentialGrid& fine_shape) {
    PotentialGrid fine(fine_shape.xs(), fine_shape.ys(), fine_shape.spacing_um(), fine_shape.boundary_condition());
    for (std::size_t j = 0; j < fine.ny(); ++j)
        for (std::size_t i = 0; i < fine.nx(); ++i)
            fine(i, j) = coarse.potential_at({fine.x_of(i), fine.y_of(j)});
    return fine;
}

std::vector<RefinementStep> refine_probe_field(const ElectrodeLayout& layout, const DielectricMap& dielectric,
                                               double initial_spacing_um, double rel_change,
                                               std::size_t max_halvings, const SolverOptions& options,
                                               const MeshGrading& grading) {
    std::vector<RefinementStep> steps;
    PotentialGrid previous;
    double spacing = initial_spacing_um;
    for (std::size_t level = 0; level <= max_halvings; ++level, spacing *= 0.5) {
        auto problem = make_coplanar_problem(layout, dielectric, spacing, options.boundary, grading);
        PotentialGrid guess;
        if (level > 0) guess = prolong(previous, problem.grid);
        previous = relax(std::move(problem), options, level > 0 ? &guess : nullptr);
        const FieldVector e = field_at(previous, layout.probe);
        double change = std::numeric_limits<double>::quiet_NaN();
        if (!steps.empty()) {
            const double before = steps.back().field.parallel_v_per_cm;
            change = std::abs(e.parallel_v_per_cm - before) / std::max(std::abs(before), 1e-300);
        }
        steps.push_back({spacing, e, change});
        if (steps.size() > 1 && change < rel_change) break;
    }
    return steps;
}

} // namespace starksim
