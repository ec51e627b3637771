#include "qbeat/lm_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "qbeat/errors.hpp"

namespace qbeat {

namespace {

Eigen::VectorXd clamp(const Eigen::VectorXd& theta, const Bounds& b) {
    Eigen::VectorXd out = theta;
    if (b.lower.size() == theta.size()) {
        out = out.cwiseMax(b.lower);
    }
    if (b.upper.size() == theta.size()) {
        out = out.cwiseMin(b.upper);
    }
    return out;
}

double pow2_step(double scale, double rel_step) {
    const double raw = rel_step * std::max(std::abs(scale), 1e-2);
    return std::exp2(std::round(std::log2(raw)));
}

struct Linearization {
    Eigen::VectorXd residual;  // (y - f) / sigma
    Eigen::MatrixXd jw;        // J / sigma
    Eigen::VectorXd gradient;  // jw^T residual
    Eigen::MatrixXd normal;    // jw^T jw
    double chi2 = 0;
};

Linearization linearize(const CurveModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& inv_sigma, const Eigen::VectorXd& theta, double rel_step) {
    Linearization lin;
    lin.residual = (y - model(x, theta)).cwiseProduct(inv_sigma);
    lin.chi2 = lin.residual.squaredNorm();
    lin.jw = inv_sigma.asDiagonal() * numeric_jacobian(model, x, theta, rel_step);
    lin.gradient = lin.jw.transpose() * lin.residual;
    lin.normal = lin.jw.transpose() * lin.jw;
    return lin;
}

double chi2_at(const CurveModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
               const Eigen::VectorXd& inv_sigma, const Eigen::VectorXd& theta) {
    const Eigen::VectorXd r = (y - model(x, theta)).cwiseProduct(inv_sigma);
    const double c = r.squaredNorm();
    return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
}

// Inverse of the normal matrix with Jacobi scaling; throws if singular.
Eigen::MatrixXd inverse_normal(const Eigen::MatrixXd& normal) {
    const Eigen::Index p = normal.rows();
    Eigen::VectorXd d(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        if (!(normal(k, k) > 0)) {
            throw DegenerateFitError(fmt::format("singular normal matrix: parameter {} has no influence on the fit", k));
        }
        d(k) = 1.0 / std::sqrt(normal(k, k));
    }
    const Eigen::MatrixXd scaled = d.asDiagonal() * normal * d.asDiagonal();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(scaled);
    lu.setThreshold(1e-13);
    if (!lu.isInvertible()) {
        throw DegenerateFitError(fmt::format("singular normal matrix (rank {} < {})", lu.rank(), p));
    }
    Eigen::MatrixXd inv = d.asDiagonal() * lu.inverse() * d.asDiagonal();
    return (inv + inv.transpose()) / 2.0;
}

} // namespace

Eigen::MatrixXd numeric_jacobian(const CurveModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                                 double rel_step) {
    Eigen::MatrixXd jac(x.size(), theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        const double h = pow2_step(theta(k), rel_step);
        Eigen::VectorXd up = theta;
        Eigen::VectorXd down = theta;
        up(k) += h;
        down(k) -= h;
        jac.col(k) = (model(x, up) - model(x, down)) / (up(k) - down(k));
    }
    return jac;
}

LmSolution lm_fit(const CurveModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                  const Eigen::VectorXd& sigma, const Eigen::VectorXd& theta0, const Bounds& bounds,
                  const LmOptions& options) {
    const Eigen::Index n = y.size();
    const Eigen::Index p = theta0.size();
    if (x.size() != n || sigma.size() != n) {
        throw ValidationError("lm_fit: x, y and sigma must have the same length");
    }
    if (p == 0 || n < p) {
        throw ValidationError(fmt::format("lm_fit: {} data points cannot determine {} parameters", n, p));
    }
    if (!theta0.allFinite()) {
        throw ValidationError("lm_fit: initial parameters must be finite");
    }
    if (!y.allFinite() || !x.allFinite()) {
        throw ValidationError("lm_fit: data must be finite");
    }
    if (!(sigma.array() > 0).all() || !sigma.allFinite()) {
        throw ValidationError("lm_fit: every sigma must be finite and > 0");
    }
    const Eigen::VectorXd inv_sigma = sigma.cwiseInverse();

    LmSolution sol;
    Eigen::VectorXd theta = clamp(theta0, bounds);
    Linearization lin = linearize(model, x, y, inv_sigma, theta, options.fd_rel_step);
    if (!std::isfinite(lin.chi2)) {
        throw ValidationError("lm_fit: model is not finite at the initial parameters");
    }
    double lambda = options.initial_lambda;
    int iterations = 0;

    while (true) {
        sol.gradient_norm = lin.gradient.lpNorm<Eigen::Infinity>();
        if (sol.gradient_norm < options.grad_tol) {
            sol.converged = true;
            sol.stop_reason = "gradient below tolerance";
            break;
        }
        if (iterations >= options.max_iterations) {
            sol.stop_reason = "iteration limit reached";
            break;
        }

        Eigen::VectorXd diag = lin.normal.diagonal().cwiseMax(1e-300);
        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = lin.normal;
            damped.diagonal() += lambda * diag;
            const Eigen::VectorXd step = damped.ldlt().solve(lin.gradient);
            const Eigen::VectorXd trial = clamp(theta + step, bounds);
            const double trial_chi2 = step.allFinite() ? chi2_at(model, x, y, inv_sigma, trial)
                                                       : std::numeric_limits<double>::infinity();
            if (trial_chi2 <= lin.chi2 && (trial - theta).norm() > 0) {
                const double rel = (lin.chi2 - trial_chi2) / std::max(lin.chi2, std::numeric_limits<double>::min());
                theta = trial;
                lin = linearize(model, x, y, inv_sigma, theta, options.fd_rel_step);
                lambda = std::max(lambda / 10.0, 1e-15);
                ++iterations;
                accepted = true;
                if (rel < options.rel_cost_tol) {
                    sol.converged = true;
                    sol.stop_reason = "relative cost change below tolerance";
                }
            } else {
                lambda *= 10.0;
                if (lambda > 1e16) {
                    break;
                }
            }
        }
        if (sol.converged) {
            sol.gradient_norm = lin.gradient.lpNorm<Eigen::Infinity>();
            break;
        }
        if (!accepted) {
            // No step reduces the cost: accept as converged only when the
            // Gauss-Newton model predicts no meaningful decrease either.
            const Eigen::VectorXd gn = lin.normal.completeOrthogonalDecomposition().solve(lin.gradient);
            const double predicted = gn.dot(lin.gradient);
            sol.gradient_norm = lin.gradient.lpNorm<Eigen::Infinity>();
            if (predicted <= 1e3 * options.rel_cost_tol * std::max(lin.chi2, 1e-300)) {
                sol.converged = true;
                sol.stop_reason = "cost stationary to machine precision";
            } else {
                sol.stop_reason = "damping overflow without cost decrease";
            }
            break;
        }
    }

    sol.theta = theta;
    sol.n_iterations = iterations;
    sol.chi2 = lin.chi2;
    sol.residual_norm = std::sqrt(lin.chi2);
    sol.dof = static_cast<int>(n - p);

    const Eigen::MatrixXd inv = inverse_normal(lin.normal);
    if (sol.dof > 0) {
        sol.reduced_chi2 = sol.chi2 / sol.dof;
        double scale = sol.reduced_chi2;
        if (options.covariance_scaling == CovarianceScaling::inflate_only) {
            scale = std::max(scale, 1.0);
        } else if (options.covariance_scaling == CovarianceScaling::none) {
            scale = 1.0;
        }
        sol.covariance = inv * scale;
        sol.sigma = sol.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
        sol.ci_defined = true;
    } else {
        sol.reduced_chi2 = std::numeric_limits<double>::quiet_NaN();
        sol.covariance = Eigen::MatrixXd::Zero(p, p);
        sol.covariance.diagonal().setConstant(std::numeric_limits<double>::infinity());
        sol.sigma = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
        sol.ci_defined = false;
    }
    return sol;
}

} // namespace qbeat
