#pragma once

// Finite-difference electrostatics for a coplanar electrode pair lying on the
// interface between a vacuum half-space (y > 0) and the host crystal (y < 0).
// Coordinates are in micrometres with the origin at the centre of the gap;
// x runs along the inter-electrode axis (crystal D2).

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace starksim {

struct Point2 {
    double x_um = 0.0;
    double y_um = 0.0;

    bool operator==(const Point2&) const = default;
};

struct ElectrodeLayout {
    double electrode_width_um = 200.0;
    double gap_um = 100.0;
    // Potentials of the electrode at negative x and the one at positive x.
    std::pair<double, double> electrode_potentials_v{0.0, 0.0};
    double domain_width_um = 2500.0;
    double domain_height_um = 2500.0;
    Point2 probe{};

    double span_um() const { return 2.0 * electrode_width_um + gap_um; }
    double applied_voltage() const {
        return electrode_potentials_v.first - electrode_potentials_v.second;
    }

    // Throws ValidationError when any layout invariant is violated.
    void validate() const;

    bool operator==(const ElectrodeLayout&) const = default;
};

struct DielectricMap {
    double relative_permittivity_above = 1.0;
    double relative_permittivity_below = 9.0;

    void validate() const;

    bool operator==(const DielectricMap&) const = default;
};

enum class BoundaryCondition { dirichlet_zero, neumann_zero };

struct SolverOptions {
    // Over-relaxation factor in (0, 2). Zero selects the asymptotically
    // optimal value for the grid size.
    double relaxation_factor = 0.0;
    double tolerance_v = 1e-6;
    std::size_t max_iterations = 200000;
    BoundaryCondition boundary = BoundaryCondition::dirichlet_zero;

    bool operator==(const SolverOptions&) const = default;
};

// Rectilinear grid of node potentials. Node coordinates may be graded; the
// nominal spacing is the largest spacing used near the electrodes.
class PotentialGrid {
public:
    PotentialGrid() = default;
    PotentialGrid(std::vector<double> xs_um, std::vector<double> ys_um, double nominal_spacing_um,
                  BoundaryCondition boundary);

    std::size_t nx() const { return xs_.size(); }
    std::size_t ny() const { return ys_.size(); }
    double spacing_um() const { return spacing_; }
    double min_spacing_um() const;
    BoundaryCondition boundary_condition() const { return boundary_; }

    const std::vector<double>& xs() const { return xs_; }
    const std::vector<double>& ys() const { return ys_; }
    double x_of(std::size_t i) const { return xs_[i]; }
    double y_of(std::size_t j) const { return ys_[j]; }

    double& operator()(std::size_t i, std::size_t j) { return values_[j * nx() + i]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[j * nx() + i]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    // Bilinear interpolation; the point must lie inside the grid.
    double potential_at(Point2 p) const;

    std::size_t iterations = 0;
    double last_update_v = 0.0;

private:
    std::vector<double> xs_;
    std::vector<double> ys_;
    double spacing_ = 1.0;
    BoundaryCondition boundary_ = BoundaryCondition::dirichlet_zero;
    std::vector<double> values_;
};

// Mesh grading around the electrode edges and the dielectric interface. The
// local spacing grows linearly with distance from a feature, from
// nominal/edge_ratio up to the nominal spacing inside the electrode region and
// up to nominal*far_ratio outside it.
struct MeshGrading {
    bool enabled = true;
    double edge_ratio = 16.0;
    double far_ratio = 8.0;
    double growth = 0.15;

    bool operator==(const MeshGrading&) const = default;
};

// Node coordinates on [lo, hi] passing exactly through every feature point.
std::vector<double> graded_axis(double lo, double hi, const std::vector<double>& features,
                                double nominal_spacing, double near_half_extent,
                                const MeshGrading& grading);

struct FieldVector {
    double parallel_v_per_cm = 0.0;
    double perpendicular_v_per_cm = 0.0;

    bool operator==(const FieldVector&) const = default;
};

// Discretised Laplace problem: node mask of pinned (Dirichlet) values plus a
// layered permittivity profile, one value per cell row (between node rows j
// and j+1). Built from an ElectrodeLayout or directly for analytic checks.
// The finite-volume stencil has positive weights, so the discrete maximum
// principle holds for any grading.
struct LaplaceProblem {
    PotentialGrid grid;
    std::vector<char> pinned;
    std::vector<double> cell_row_permittivity;
};

LaplaceProblem make_coplanar_problem(const ElectrodeLayout& layout, const DielectricMap& dielectric,
                                     double spacing_um, BoundaryCondition boundary,
                                     const MeshGrading& grading = {});

// Two plates at x = -gap/2 and x = +gap/2 spanning the full height, with
// zero-flux top and bottom boundaries.
LaplaceProblem make_parallel_plate_problem(double voltage, double gap_um, double height_um,
                                           double spacing_um, const DielectricMap& dielectric);

// Red-black successive over-relaxation until the largest per-sweep update
// falls below the tolerance. An initial guess of matching shape may be given.
PotentialGrid relax(LaplaceProblem problem, const SolverOptions& options,
                    const PotentialGrid* initial_guess = nullptr);

PotentialGrid solve_potential(const ElectrodeLayout& layout, const DielectricMap& dielectric,
                              double spacing_um, const SolverOptions& options = {},
                              const MeshGrading& grading = {});

// Negated central-difference gradient (three-point on graded nodes),
// bilinearly interpolated from the nodes of the enclosing cell.
FieldVector field_at(const PotentialGrid& grid, Point2 point);

// Parallel-plate field V/gap in V/cm.
double uniform_field_oracle(double voltage, double gap_um);

// Analytic gap-centre field of two zero-thickness coplanar strips at a
// potential difference V in an unbounded medium: V / (gap * K(k)),
// k = gap / (gap + 2 width). Independent check for the solver.
double coplanar_strip_center_field(double voltage, double gap_um, double electrode_width_um);

struct RefinementStep {
    double spacing_um;
    FieldVector field;
    double relative_change;  // versus the previous step; NaN for the first
};

// Halve the spacing until the probe field changes by less than rel_change,
// seeding each solve with the prolonged coarse solution.
std::vector<RefinementStep> refine_probe_field(const ElectrodeLayout& layout,
                                               const DielectricMap& dielectric,
                                               double initial_spacing_um, double rel_change,
                                               std::size_t max_halvings,
                                               const SolverOptions& options = {},
                                               const MeshGrading& grading = {});

// Bilinear interpolation of a solution onto the nodes of another grid
// covering the same extent.
PotentialGrid prolong(const PotentialGrid& coarse, const PotentialGrid& fine_shape);

} // namespace starksim
