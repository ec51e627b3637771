#include <doctest.h>

#include <cmath>
#include <random>

#include "qbeat/analysis.hpp"
#include "qbeat/lm_fit.hpp"

using namespace qbeat;
using Eigen::VectorXd;

namespace {

const auto sys = rb85_system<double>();
const double branching = sys.branching();

CurveModel decay_curve(IntensityModel model = IntensityModel::two_term) {
    return [=](const VectorXd& t, const VectorXd& th) { return decay_model(t, th, sys.omega23, branching, model); };
}

VectorXd time_grid(double t_end, double dt) {
    const auto n = static_cast<Eigen::Index>(std::llround(t_end / dt));
    return VectorXd::LinSpaced(n, 0.0, dt * static_cast<double>(n - 1));
}

// Partial derivatives of i0 [e^{-g t} + ib e^{-a g t} sin(w t + phi)],
// a = (1 + branching) / 2, written out by hand.
Eigen::MatrixXd decay_jacobian(const VectorXd& t, const VectorXd& th) {
    const double i0 = th(0), ib = th(1), g = th(2), phi = th(3);
    const double a = 0.5 * (1 + branching);
    const double w = sys.omega23;
    Eigen::MatrixXd j(t.size(), 4);
    for (Eigen::Index k = 0; k < t.size(); ++k) {
        const double x = t(k);
        const double e1 = std::exp(-g * x);
        const double e2 = std::exp(-a * g * x);
        const double s = std::sin(w * x + phi);
        const double c = std::cos(w * x + phi);
        j(k, 0) = e1 + ib * e2 * s;
        j(k, 1) = i0 * e2 * s;
        j(k, 2) = i0 * (-x * e1 - a * x * ib * e2 * s);
        j(k, 3) = i0 * ib * e2 * c;
    }
    return j;
}

} // namespace

TEST_CASE("exact data at the true parameters") {
    const VectorXd t = time_grid(120, 0.5);
    const VectorXd truth = (VectorXd(4) << 1.0, 0.157, 5.6 * sys.gamma22, 0.275).finished();
    const VectorXd y = decay_curve()(t, truth);
    const auto sol = lm_fit(decay_curve(), t, y, VectorXd::Ones(t.size()), truth);
    CHECK(sol.converged);
    CHECK(sol.n_iterations <= 2);
    CHECK(sol.residual_norm < 1e-12);
}

TEST_CASE("quadratic through three points") {
    const CurveModel quad = [](const VectorXd& x, const VectorXd& th) {
        return (th(0) + th(1) * x.array() + th(2) * x.array().square()).matrix().eval();
    };
    const VectorXd x = (VectorXd(3) << -1.0, 0.5, 2.0).finished();
    const VectorXd y = (VectorXd(3) << 4.0, 0.25, 3.0).finished();
    const auto sol = lm_fit(quad, x, y, VectorXd::Ones(3), VectorXd::Zero(3));
    CHECK(sol.converged);
    CHECK(sol.residual_norm < 1e-10);
    CHECK((quad(x, sol.theta) - y).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_FALSE(sol.ci_defined);
}

TEST_CASE("decay model recovered from perturbed starts") {
    const VectorXd t = time_grid(120, 0.5);
    const VectorXd truth = (VectorXd(4) << 1.0, 0.157, 5.6 * sys.gamma22, 0.275).finished();
    const VectorXd y = decay_curve()(t, truth);
    const VectorXd sigma = VectorXd::Constant(t.size(), 0.01);
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> factor(0.7, 1.3);
    for (int trial = 0; trial < 20; ++trial) {
        VectorXd start = truth;
        for (Eigen::Index k = 0; k < 4; ++k) {
            start(k) *= factor(gen);
        }
        const auto sol = lm_fit(decay_curve(), t, y, sigma, start);
        REQUIRE(sol.converged);
        for (Eigen::Index k = 0; k < 4; ++k) {
            CHECK(sol.theta(k) == doctest::Approx(truth(k)).epsilon(1e-3));
        }
    }
}

TEST_CASE("linear model covariance equals weighted least squares") {
    const CurveModel line = [](const VectorXd& x, const VectorXd& th) {
        return (th(0) * x.array() + th(1)).matrix().eval();
    };
    std::mt19937_64 gen(5);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int n = 25;
    VectorXd x(n), y(n), sigma(n);
    for (int k = 0; k < n; ++k) {
        x(k) = 0.2 * k;
        sigma(k) = 0.1 + 0.02 * k;
        y(k) = 1.7 * x(k) - 0.3 + sigma(k) * noise(gen);
    }
    const auto sol = lm_fit(line, x, y, sigma, VectorXd::Zero(2));
    REQUIRE(sol.converged);

    Eigen::MatrixXd a(n, 2);
    a.col(0) = x.cwiseQuotient(sigma);
    a.col(1) = sigma.cwiseInverse();
    const VectorXd b = y.cwiseQuotient(sigma);
    const Eigen::Matrix2d normal = a.transpose() * a;
    const Eigen::Vector2d beta = normal.ldlt().solve(a.transpose() * b);
    const double chi2 = (a * beta - b).squaredNorm();
    const Eigen::Matrix2d cov = normal.inverse() * chi2 / (n - 2);

    CHECK((sol.theta - beta).norm() < 1e-10);
    CHECK((sol.covariance - cov).cwiseAbs().maxCoeff() <= 1e-10 * cov.cwiseAbs().maxCoeff());
    CHECK(sol.dof == n - 2);
    CHECK(sol.reduced_chi2 == doctest::Approx(chi2 / (n - 2)).epsilon(1e-10));

    LmOptions raw;
    raw.covariance_scaling = CovarianceScaling::none;
    const auto unscaled = lm_fit(line, x, y, sigma, VectorXd::Zero(2), {}, raw);
    CHECK((unscaled.covariance - normal.inverse()).cwiseAbs().maxCoeff() <= 1e-10 * normal.inverse().cwiseAbs().maxCoeff());

    LmOptions inflate;
    inflate.covariance_scaling = CovarianceScaling::inflate_only;
    const auto inflated = lm_fit(line, x, y, sigma, VectorXd::Zero(2), {}, inflate);
    const double expected_scale = std::max(1.0, chi2 / (n - 2));
    CHECK(inflated.covariance(0, 0) == doctest::Approx(normal.inverse()(0, 0) * expected_scale).epsilon(1e-10));
}

TEST_CASE("numeric Jacobian matches analytic derivatives") {
    const VectorXd t = time_grid(120, 0.5);
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        VectorXd th(4);
        th << 0.5 + u(gen), 0.01 + 0.2 * u(gen), (1 + 5 * u(gen)) * sys.gamma22, 0.05 + 0.3 * u(gen);
        const Eigen::MatrixXd num = numeric_jacobian(decay_curve(), t, th);
        const Eigen::MatrixXd ana = decay_jacobian(t, th);
        for (Eigen::Index c = 0; c < 4; ++c) {
            const double scale = ana.col(c).cwiseAbs().maxCoeff();
            CHECK((num.col(c) - ana.col(c)).cwiseAbs().maxCoeff() <= 1e-6 * scale);
        }
    }
}

TEST_CASE("bounds are respected") {
    const CurveModel expo = [](const VectorXd& x, const VectorXd& th) {
        return (th(0) * (-th(1) * x.array()).exp()).matrix().eval();
    };
    const VectorXd x = VectorXd::LinSpaced(30, 0, 5);
    const VectorXd y = (2.0 * (-0.8 * x.array()).exp()).matrix();
    Bounds b;
    b.lower = (VectorXd(2) << 0.0, 0.0).finished();
    b.upper = (VectorXd(2) << 10.0, 0.5).finished();
    const auto sol = lm_fit(expo, x, y, VectorXd::Constant(30, 0.01), (VectorXd(2) << 1.0, 0.2).finished(), b);
    CHECK(sol.theta(1) <= 0.5);
    CHECK(sol.theta(1) >= 0.0);
}

TEST_CASE("degenerate and invalid problems") {
    // Two parameters that only enter as a sum leave the normal matrix singular.
    const CurveModel redundant = [](const VectorXd& x, const VectorXd& th) {
        return ((th(0) + th(1)) * x.array()).matrix().eval();
    };
    const VectorXd x = VectorXd::LinSpaced(12, 0, 1);
    const VectorXd y = 3 * x;
    CHECK_THROWS_AS(lm_fit(redundant, x, y, VectorXd::Ones(12), (VectorXd(2) << 1.0, 1.0).finished()),
                    DegenerateFitError);

    const CurveModel line = [](const VectorXd& xs, const VectorXd& th) {
        return (th(0) * xs.array() + th(1)).matrix().eval();
    };
    CHECK_THROWS_AS(lm_fit(line, x, y, VectorXd::Zero(12), VectorXd::Zero(2)), ValidationError);
    CHECK_THROWS_AS(lm_fit(line, x, y, VectorXd::Ones(11), VectorXd::Zero(2)), ValidationError);
    CHECK_THROWS_AS(lm_fit(line, x.head(1), y.head(1), VectorXd::Ones(1), VectorXd::Zero(2)), ValidationError);
    VectorXd bad = VectorXd::Zero(2);
    bad(0) = std::nan("");
    CHECK_THROWS_AS(lm_fit(line, x, y, VectorXd::Ones(12), bad), ValidationError);
}

TEST_CASE("iteration cap flags non-convergence") {
    const VectorXd t = time_grid(120, 0.5);
    const VectorXd truth = (VectorXd(4) << 1.0, 0.157, 5.6 * sys.gamma22, 0.275).finished();
    const VectorXd y = decay_curve()(t, truth);
    LmOptions opts;
    opts.max_iterations = 1;
    const VectorXd start = (VectorXd(4) << 0.7, 0.1, 3.0 * sys.gamma22, 0.1).finished();
    const auto sol = lm_fit(decay_curve(), t, y, VectorXd::Constant(t.size(), 0.01), start, {}, opts);
    CHECK_FALSE(sol.converged);
}
