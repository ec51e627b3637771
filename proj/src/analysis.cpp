#include "qbeat/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include <fmt/format.h>
#include <unsupported/Eigen/FFT>

#include "qbeat/errors.hpp"

namespace qbeat {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

struct WindowSlice {
    std::size_t first = 0;
    std::size_t count = 0;
};

// Bins whose time lies in [start, end).
WindowSlice select_window(const Histogram& hist, const FitWindow& w) {
    if (!std::isfinite(w.start) || !std::isfinite(w.end) || !(w.end > w.start)) {
        throw ValidationError(fmt::format("fit window [{}, {}) is empty", w.start, w.end));
    }
    if (hist.size() == 0) {
        throw ValidationError("histogram has no bins");
    }
    const double eps = 1e-9 * hist.bin_width;
    const double data_end = hist.time(hist.size() - 1) + hist.bin_width;
    if (w.start < hist.t_start - eps || w.end > data_end + eps) {
        throw ValidationError(fmt::format("fit window [{}, {}) outside the data range [{}, {})", w.start, w.end,
                                          hist.t_start, data_end));
    }
    WindowSlice s;
    s.first = hist.size();
    for (std::size_t k = 0; k < hist.size(); ++k) {
        const double t = hist.time(k);
        if (t >= w.start - eps && t < w.end - eps) {
            s.first = std::min(s.first, k);
            ++s.count;
        }
    }
    if (s.count == 0) {
        throw ValidationError(fmt::format("fit window [{}, {}) contains no bins", w.start, w.end));
    }
    return s;
}

void require_model(IntensityModel m) {
    if (m == IntensityModel::exact) {
        throw ValidationError("decay fits support the two-term and three-term models only");
    }
}

} // namespace

Eigen::VectorXd decay_model(const Eigen::VectorXd& t, const Eigen::VectorXd& theta, double omega23, double branching,
                            IntensityModel model) {
    require_model(model);
    const double i0 = theta(0), ib = theta(1), g = theta(2), phi = theta(3);
    const double g33 = branching * g;
    const double gavg = 0.5 * (g + g33);
    const double q = g33 / (2 * omega23);
    Eigen::VectorXd out(t.size());
    for (Eigen::Index k = 0; k < t.size(); ++k) {
        double v = std::exp(-g * t(k)) + ib * std::exp(-gavg * t(k)) * std::sin(omega23 * t(k) + phi);
        if (model == IntensityModel::three_term) {
            v += q * q * std::exp(-g33 * t(k));
        }
        out(k) = i0 * v;
    }
    return out;
}

FitResult fit_decay(const Histogram& hist, const SystemParams<double>& sys, const DecayFitOptions& options) {
    validate(sys);
    require_model(options.model);
    if (!(hist.steady_counts > 0) || !std::isfinite(hist.steady_counts)) {
        throw ValidationError("histogram steady_counts must be finite and > 0 (files without metadata need it supplied)");
    }
    const WindowSlice slice = select_window(hist, options.window);
    if (slice.count < 10) {
        throw ValidationError(fmt::format("fit window holds {} bins; at least 10 are required", slice.count));
    }

    const auto n = static_cast<Eigen::Index>(slice.count);
    Eigen::VectorXd t(n), y(n), sigma(n);
    double total = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t bin = slice.first + static_cast<std::size_t>(k);
        const double c = hist.counts[bin];
        if (!(c >= 0) || !std::isfinite(c)) {
            throw ValidationError(fmt::format("bin {} holds invalid count {}", bin, c));
        }
        total += c;
        t(k) = hist.time(bin);
        y(k) = c / hist.steady_counts;
        sigma(k) = std::max(std::sqrt(c), 1.0) / hist.steady_counts;
    }
    if (!(total > 0)) {
        throw ValidationError("all counts in the fit window are zero");
    }

    // Envelope rate from a count-weighted regression of log(y) on t.
    double sw = 0, st = 0, sl = 0, stt = 0, stl = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const double c = hist.counts[slice.first + static_cast<std::size_t>(k)];
        if (c <= 0) {
            continue;
        }
        const double l = std::log(y(k));
        sw += c;
        st += c * t(k);
        sl += c * l;
        stt += c * t(k) * t(k);
        stl += c * t(k) * l;
    }
    const double det = sw * stt - st * st;
    double g0 = sys.gamma22;
    if (det > 0) {
        g0 = -(sw * stl - st * sl) / det;
    }
    if (!std::isfinite(g0)) {
        g0 = sys.gamma22;
    }
    g0 = std::clamp(g0, 0.2 * sys.gamma22, 0.5 * sys.omega23);
    const double branching = sys.branching();

    Eigen::Vector4d theta0(y(0) > 0 ? y(0) : total / hist.steady_counts / static_cast<double>(n),
                           branching * g0 / sys.omega23, g0, std::atan(g0 / sys.omega23));
    Bounds bounds;
    bounds.lower = Eigen::Vector4d(0, -1, 1e-6 * sys.gamma22, -std::numbers::pi);
    bounds.upper = Eigen::Vector4d(inf, 1, sys.omega23, std::numbers::pi);

    const double omega23 = sys.omega23;
    const IntensityModel model = options.model;
    const CurveModel curve = [=](const Eigen::VectorXd& x, const Eigen::VectorXd& th) {
        return decay_model(x, th, omega23, branching, model);
    };
    LmSolution sol = lm_fit(curve, t, y, sigma, theta0, bounds, options.lm);
    if (options.weighting == Weighting::model && sol.converged) {
        const Eigen::VectorXd expected = curve(t, sol.theta) * hist.steady_counts;
        for (Eigen::Index k = 0; k < n; ++k) {
            sigma(k) = std::max(std::sqrt(std::max(expected(k), 0.0)), 1.0) / hist.steady_counts;
        }
        sol = lm_fit(curve, t, y, sigma, sol.theta, bounds, options.lm);
    }
    if (!sol.converged) {
        throw NumericError(fmt::format("decay fit did not converge after {} iterations ({})", sol.n_iterations,
                                       sol.stop_reason));
    }

    FitResult r;
    r.i0 = sol.theta(0);
    r.ib = sol.theta(1);
    r.gamma22N = sol.theta(2);
    r.phi = sol.theta(3);
    r.covariance = sol.covariance;
    r.sigma = sol.sigma;
    r.chi2 = sol.chi2;
    r.reduced_chi2 = sol.reduced_chi2;
    r.residual_norm = sol.residual_norm;
    r.gradient_norm = sol.gradient_norm;
    r.n_iterations = sol.n_iterations;
    r.n_points = static_cast<int>(n);
    r.converged = true;
    r.window = options.window;
    r.model = model;
    r.omega23 = omega23;
    r.branching = branching;
    return r;
}

double Spectrum::peak_frequency() const {
    std::size_t best = 0;
    double best_mag = 0;
    for (std::size_t k = 1; k < magnitude.size(); ++k) {
        if (magnitude[k] > best_mag) {
            best_mag = magnitude[k];
            best = k;
        }
    }
    return best == 0 ? std::numeric_limits<double>::quiet_NaN() : freqs_MHz[best];
}

Spectrum magnitude_spectrum(std::span<const double> signal, double sample_ns, int zero_pad_factor) {
    if (signal.empty()) {
        throw ValidationError("cannot transform an empty signal");
    }
    if (zero_pad_factor < 1) {
        throw ValidationError(fmt::format("zero_pad_factor must be an integer >= 1 (got {})", zero_pad_factor));
    }
    if (!(sample_ns > 0)) {
        throw ValidationError("sample spacing must be > 0");
    }
    const std::size_t n = signal.size();
    const std::size_t len = static_cast<std::size_t>(zero_pad_factor) * std::bit_ceil(n);

    std::vector<double> padded(len, 0.0);
    std::copy(signal.begin(), signal.end(), padded.begin());
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> bins;
    fft.fwd(bins, padded);

    Spectrum s;
    s.zero_pad_factor = zero_pad_factor;
    s.resolution_MHz = 1e3 / (sample_ns * static_cast<double>(len));
    const std::size_t half = len / 2;
    s.freqs_MHz.resize(half + 1);
    s.magnitude.resize(half + 1);
    for (std::size_t k = 0; k <= half; ++k) {
        const double scale = (k == 0 || k == half) ? 1.0 : 2.0;
        s.freqs_MHz[k] = static_cast<double>(k) * s.resolution_MHz;
        s.magnitude[k] = scale * std::abs(bins[k]) / static_cast<double>(n);
    }
    return s;
}

Spectrum subtract_and_fft(const Histogram& hist, const FitResult& fit, int zero_pad_factor) {
    if (!fit.converged) {
        throw ValidationError("cannot subtract an unconverged fit");
    }
    if (!(fit.i0 > 0)) {
        throw ValidationError("fit normalization i0 must be > 0");
    }
    if (!(hist.steady_counts > 0)) {
        throw ValidationError("histogram steady_counts must be > 0");
    }
    const WindowSlice slice = select_window(hist, fit.window);
    std::vector<double> residual(slice.count);
    double mean = 0;
    for (std::size_t k = 0; k < slice.count; ++k) {
        const std::size_t bin = slice.first + k;
        const double t = hist.time(bin);
        residual[k] = hist.counts[bin] / hist.steady_counts / fit.i0 - std::exp(-fit.gamma22N * t);
        mean += residual[k];
    }
    mean /= static_cast<double>(slice.count);
    for (double& r : residual) {
        r -= mean;
    }

    Spectrum s = magnitude_spectrum(residual, hist.bin_width, zero_pad_factor);
    if (fit.omega23 > 0) {
        const double span = static_cast<double>(slice.count) * hist.bin_width;
        const double period = 2 * std::numbers::pi / fit.omega23;
        if (span < 4 * period) {
            s.warning = fmt::format("window of {:.4g} ns covers fewer than 4 beat periods ({:.4g} ns each); "
                                    "peak resolution degraded",
                                    span, period);
        }
    }
    return s;
}

double MetaFit::evaluate(double x) const {
    return model == MetaModel::linear ? params(0) * x + params(1) : std::atan(params(0) * x) + params(1);
}

Eigen::Vector2d MetaFit::gradient(double x) const {
    if (model == MetaModel::linear) {
        return {x, 1.0};
    }
    const double u = params(0) * x;
    return {x / (1 + u * u), 1.0};
}

double MetaFit::band(double x) const {
    if (!ci_defined) {
        return inf;
    }
    const Eigen::Vector2d g = gradient(x);
    return std::sqrt(std::max(g.dot(covariance * g), 0.0));
}

namespace {

void check_meta_points(std::span<const MetaPoint> points) {
    if (points.size() < 2) {
        throw ValidationError(fmt::format("meta-fit needs at least 2 points (got {})", points.size()));
    }
    for (const auto& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw ValidationError("meta-fit points must be finite");
        }
        if (!(p.sigma > 0) || !std::isfinite(p.sigma)) {
            throw ValidationError(fmt::format("meta-fit point at x = {} has zero or invalid weight", p.x));
        }
    }
}

void mark_undetermined(MetaFit& m) {
    m.ci_defined = false;
    m.sigma.setConstant(inf);
    m.covariance.setZero();
    m.covariance.diagonal().setConstant(inf);
}

} // namespace

MetaFit fit_enhancement_line(std::span<const MetaPoint> points) {
    check_meta_points(points);
    double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : points) {
        const double w = 1 / (p.sigma * p.sigma);
        s += w;
        sx += w * p.x;
        sy += w * p.y;
        sxx += w * p.x * p.x;
        sxy += w * p.x * p.y;
    }
    const double det = s * sxx - sx * sx;
    if (!(det > 1e-14 * s * sxx)) {
        throw DegenerateFitError("enhancement line needs at least two distinct x values");
    }

    MetaFit m;
    m.model = MetaModel::linear;
    m.params << (s * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det;
    m.dof = static_cast<int>(points.size()) - 2;
    for (const auto& p : points) {
        const double r = (p.y - m.evaluate(p.x)) / p.sigma;
        m.chi2 += r * r;
    }
    if (m.dof == 0) {
        mark_undetermined(m);
        return m;
    }
    m.covariance << s / det, -sx / det, -sx / det, sxx / det;
    m.covariance *= m.chi2 / m.dof;
    m.sigma = m.covariance.diagonal().cwiseSqrt();
    return m;
}

MetaFit fit_phase_curve(std::span<const MetaPoint> points) {
    check_meta_points(points);
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::VectorXd x(n), y(n), sigma(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        x(k) = points[static_cast<std::size_t>(k)].x;
        y(k) = points[static_cast<std::size_t>(k)].y;
        sigma(k) = points[static_cast<std::size_t>(k)].sigma;
    }
    // Small-angle start: the straight line through the phases.
    const MetaFit line = fit_enhancement_line(points);
    const Eigen::Vector2d theta0(line.slope(), line.intercept());

    const CurveModel curve = [](const Eigen::VectorXd& xs, const Eigen::VectorXd& th) {
        return ((th(0) * xs.array()).atan() + th(1)).matrix().eval();
    };
    const LmSolution sol = lm_fit(curve, x, y, sigma, theta0);

    MetaFit m;
    m.model = MetaModel::arctan;
    m.params = sol.theta;
    m.chi2 = sol.chi2;
    m.dof = sol.dof;
    m.n_iterations = sol.n_iterations;
    m.converged = sol.converged;
    if (!sol.ci_defined) {
        mark_undetermined(m);
        return m;
    }
    m.covariance = sol.covariance;
    m.sigma = sol.sigma;
    return m;
}

double ib_theory(double enhancement, const SystemParams<double>& sys) {
    return enhancement * sys.gamma33 / sys.omega23;
}

std::vector<BeatRow> beat_summary(std::span<const OdFit> fits, const SystemParams<double>& sys) {
    std::vector<BeatRow> rows;
    rows.reserve(fits.size());
    for (const auto& f : fits) {
        if (!f.fit.converged) {
            throw ValidationError(fmt::format("fit at od = {} did not converge", f.od));
        }
        BeatRow row;
        row.od = f.od;
        row.enhancement = f.fit.gamma22N / sys.gamma22;
        row.enhancement_sigma = f.fit.sigma(2) / sys.gamma22;
        row.ib = f.fit.ib;
        row.ib_sigma = f.fit.sigma(1);
        row.phi = f.fit.phi;
        row.phi_sigma = f.fit.sigma(3);
        row.ib_theory = ib_theory(row.enhancement, sys);
        rows.push_back(row);
    }
    return rows;
}

} // namespace qbeat
