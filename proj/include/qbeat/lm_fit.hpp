#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace qbeat {

/// Curve model: predictions at every abscissa in `x` for parameters `theta`.
using CurveModel = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& theta)>;

/// Box constraints; empty vectors mean unbounded.
struct Bounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

/// How the inverse normal matrix becomes the reported covariance:
/// `reduced_chi2` multiplies by chi2/dof, `inflate_only` by max(1, chi2/dof)
/// (for absolute error bars), `none` leaves it unscaled.
enum class CovarianceScaling { reduced_chi2, inflate_only, none };

struct LmOptions {
    int max_iterations = 200;
    double rel_cost_tol = 1e-12;
    double grad_tol = 1e-10;
    double fd_rel_step = 1e-6;
    double initial_lambda = 1e-3;
    CovarianceScaling covariance_scaling = CovarianceScaling::reduced_chi2;
};

struct LmSolution {
    Eigen::VectorXd theta;
    Eigen::MatrixXd covariance;  ///< inverse normal matrix scaled per LmOptions
    Eigen::VectorXd sigma;       ///< sqrt(diag(covariance)); +inf when dof <= 0
    double chi2 = 0;
    double reduced_chi2 = 0;
    double residual_norm = 0;    ///< sqrt(chi2)
    double gradient_norm = 0;    ///< infinity norm of J^T W r at the solution
    int dof = 0;
    int n_iterations = 0;
    bool converged = false;
    bool ci_defined = false;     ///< false when dof <= 0
    std::string stop_reason;
};

/// Central-difference Jacobian d model / d theta (rows: points, cols: params).
/// Steps are powers of two close to rel_step * max(|theta_k|, 1e-2).
Eigen::MatrixXd numeric_jacobian(const CurveModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                                 double rel_step = 1e-6);

/// Levenberg-Marquardt minimization of sum(((y - model) / sigma)^2).
///
/// Non-convergence is reported through `converged`, never thrown. A singular
/// normal matrix at the solution throws DegenerateFitError.
LmSolution lm_fit(const CurveModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                  const Eigen::VectorXd& sigma, const Eigen::VectorXd& theta0, const Bounds& bounds = {},
                  const LmOptions& options = {});

} // namespace qbeat
