#include "starksim/least_squares.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace starksim {

namespace {

constexpr double kMaxDamping = 1e16;

double sum_squares(const Eigen::VectorXd& r) {
    const double s = r.squaredNorm();
    return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

} // namespace

double objective(const ResidualFunction& f, const Eigen::VectorXd& params) {
    Eigen::VectorXd r;
    f(params, r, nullptr);
    return r.squaredNorm();
}

Eigen::VectorXd objective_gradient(const ResidualFunction& f, const Eigen::VectorXd& params) {
    Eigen::VectorXd r;
    Eigen::MatrixXd j;
    f(params, r, &j);
    return 2.0 * j.transpose() * r;
}

LeastSquaresSolution levenberg_marquardt(const ResidualFunction& f, Eigen::VectorXd initial,
                                         const LevenbergMarquardtOptions& options) {
    const Eigen::Index np = initial.size();
    Eigen::VectorXd p = std::move(initial);
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    f(p, r, &jac);
    double chi2 = sum_squares(r);
    if (!std::isfinite(chi2)) throw FitConvergenceError("objective is not finite at the initial guess", p);

    double damping = options.initial_damping;
    bool converged = chi2 == 0.0;
    int iter = 0;
    Eigen::VectorXd r_trial;
    while (!converged && iter < options.max_iterations) {
        ++iter;
        const Eigen::MatrixXd a = jac.transpose() * jac;
        const Eigen::VectorXd g = jac.transpose() * r;
        Eigen::VectorXd scale = a.diagonal();
        const double floor = 1e-15 * std::max(scale.maxCoeff(), 1e-300);
        for (Eigen::Index k = 0; k < np; ++k) scale[k] = std::max(scale[k], floor);

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd m = a;
            m.diagonal() += damping * scale;
            const Eigen::VectorXd step = -m.ldlt().solve(g);
            const Eigen::VectorXd trial = p + step;
            f(trial, r_trial, nullptr);
            const double chi2_trial = step.allFinite() ? sum_squares(r_trial) : std::numeric_limits<double>::infinity();
            if (chi2_trial < chi2) {
                const double decrease = (chi2 - chi2_trial) / chi2;
                p = trial;
                chi2 = chi2_trial;
                f(p, r, &jac);
                damping = std::max(damping / options.damping_down, 1e-12);
                accepted = true;
                if (decrease < options.relative_tolerance || chi2 <= 1e-300) converged = true;
            } else {
                damping *= options.damping_up;
                // No damped step lowers the objective: the current point is a
                // minimum to working precision.
                if (damping > kMaxDamping) {
                    converged = true;
                    break;
                }
            }
        }
    }
    if (!converged)
        throw FitConvergenceError(fmt::format("Levenberg-Marquardt did not converge in {} iterations", options.max_iterations), p);

    LeastSquaresSolution out;
    out.params = p;
    out.chi_square = chi2;
    out.iterations = iter;
    out.converged = true;
    const Eigen::MatrixXd a = jac.transpose() * jac;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (lu.isInvertible())
        out.covariance = lu.inverse();
    else
        out.covariance = Eigen::MatrixXd::Constant(np, np, std::numeric_limits<double>::infinity());
    return out;
}

} // namespace starksim
