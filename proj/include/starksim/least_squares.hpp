#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) minimisation of a sum of squared
// weighted residuals.

#include <Eigen/Core>
#include <functional>
#include <stdexcept>
#include <string>

namespace starksim {

// Residuals r(p) and, when `jacobian` is non-null, dr/dp.
using ResidualFunction = std::function<void(const Eigen::VectorXd& params, Eigen::VectorXd& residuals,
                                            Eigen::MatrixXd* jacobian)>;

struct LevenbergMarquardtOptions {
    double initial_damping = 1e-3;
    double damping_up = 10.0;
    double damping_down = 10.0;
    int max_iterations = 200;
    // Converged once an accepted step lowers the objective by less than this
    // fraction.
    double relative_tolerance = 1e-10;
};

struct LeastSquaresSolution {
    Eigen::VectorXd params;
    Eigen::MatrixXd covariance;  // (J^T J)^-1 at the optimum
    double chi_square = 0.0;
    int iterations = 0;
    bool converged = false;
};

class FitConvergenceError : public std::runtime_error {
public:
    FitConvergenceError(const std::string& what, Eigen::VectorXd last_params)
        : std::runtime_error(what), last_params_(std::move(last_params)) {}
    const Eigen::VectorXd& last_params() const noexcept { return last_params_; }

private:
    Eigen::VectorXd last_params_;
};

// Sum of squared residuals and its gradient 2 J^T r.
double objective(const ResidualFunction& f, const Eigen::VectorXd& params);
Eigen::VectorXd objective_gradient(const ResidualFunction& f, const Eigen::VectorXd& params);

// Throws FitConvergenceError when max_iterations is exhausted.
LeastSquaresSolution levenberg_marquardt(const ResidualFunction& f, Eigen::VectorXd initial,
                                         const LevenbergMarquardtOptions& options = {});

} // namespace starksim
