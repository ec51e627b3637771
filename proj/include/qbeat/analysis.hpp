#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qbeat/beat.hpp"
#include "qbeat/lm_fit.hpp"
#include "qbeat/params.hpp"
#include "qbeat/synth.hpp"

namespace qbeat {

/// Half-open interval [start, end) in ns selecting histogram bins.
struct FitWindow {
    double start = 0;
    double end = 120;
};

/// Per-bin error bars: `observed` uses max(sqrt(counts), 1); `model`
/// refits once with max(sqrt(expected counts), 1) from the first fit.
enum class Weighting { observed, model };

/// Shot-noise error bars are absolute, so the covariance is only ever
/// inflated by a poor fit, never shrunk by near-empty tail bins.
inline LmOptions decay_lm_options() {
    LmOptions o;
    o.covariance_scaling = CovarianceScaling::inflate_only;
    return o;
}

struct DecayFitOptions {
    FitWindow window;
    IntensityModel model = IntensityModel::two_term;
    Weighting weighting = Weighting::observed;
    LmOptions lm = decay_lm_options();
};

/// Parameter order in vectors and covariance: (i0, ib, gamma22N, phi).
struct FitResult {
    double i0 = 0;
    double ib = 0;
    double gamma22N = 0;  ///< rad/ns
    double phi = 0;       ///< rad
    Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
    Eigen::Vector4d sigma = Eigen::Vector4d::Zero();
    double chi2 = 0;
    double reduced_chi2 = 0;
    double residual_norm = 0;
    double gradient_norm = 0;
    int n_iterations = 0;
    int n_points = 0;
    bool converged = false;
    FitWindow window;
    IntensityModel model = IntensityModel::two_term;
    double omega23 = 0;    ///< fixed during the fit
    double branching = 0;  ///< Gamma33/Gamma22, fixed during the fit

    Eigen::Vector4d params() const { return {i0, ib, gamma22N, phi}; }
};

/// Modulated decay i0 * [e^{-g t} (+ middle term) + ib e^{-gavg t} sin(omega23 t + phi)]
/// with gavg = g (1 + branching) / 2.
Eigen::VectorXd decay_model(const Eigen::VectorXd& t, const Eigen::VectorXd& theta, double omega23, double branching,
                            IntensityModel model = IntensityModel::two_term);

/// Fits the post-flash decay of a histogram normalized by its steady counts.
FitResult fit_decay(const Histogram& hist, const SystemParams<double>& sys, const DecayFitOptions& options = {});

struct Spectrum {
    std::vector<double> freqs_MHz;
    std::vector<double> magnitude;
    double resolution_MHz = 0;
    int zero_pad_factor = 1;
    std::optional<std::string> warning;

    /// Frequency of the largest magnitude above DC.
    double peak_frequency() const;
};

/// Single-sided magnitude spectrum |X_k| * 2 / n of a uniformly sampled
/// signal, zero padded to zero_pad_factor * next_pow2(n) samples.
Spectrum magnitude_spectrum(std::span<const double> signal, double sample_ns, int zero_pad_factor);

/// Residual y/i0 - e^{-gamma22N t} minus its mean over the fit window,
/// transformed to a magnitude spectrum in MHz.
Spectrum subtract_and_fft(const Histogram& hist, const FitResult& fit, int zero_pad_factor = 8);

enum class MetaModel { linear, arctan };

struct MetaPoint {
    double x = 0;
    double y = 0;
    double sigma = 1;
};

/// Two-parameter fit across optical depths.
///   linear: y = params[0] * x + params[1]          (slope, intercept)
///   arctan: y = atan(params[0] * x) + params[1]    (eta, phi0)
struct MetaFit {
    MetaModel model = MetaModel::linear;
    Eigen::Vector2d params = Eigen::Vector2d::Zero();
    Eigen::Vector2d sigma = Eigen::Vector2d::Zero();
    Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
    double chi2 = 0;
    int dof = 0;
    int n_iterations = 0;
    bool converged = true;
    bool ci_defined = true;  ///< false for an exactly determined fit

    double slope() const { return params(0); }
    double intercept() const { return params(1); }
    double eta() const { return params(0); }
    double phi0() const { return params(1); }

    double evaluate(double x) const;
    Eigen::Vector2d gradient(double x) const;
    /// One-sigma confidence band half-width by linear error propagation.
    double band(double x) const;
};

MetaFit fit_enhancement_line(std::span<const MetaPoint> points);
MetaFit fit_phase_curve(std::span<const MetaPoint> points);

struct OdFit {
    double od = 0;
    FitResult fit;
};

struct BeatRow {
    double od = 0;
    double enhancement = 0;
    double enhancement_sigma = 0;
    double ib = 0;
    double ib_sigma = 0;
    double phi = 0;
    double phi_sigma = 0;
    double ib_theory = 0;
};

/// Ib predicted by Gamma33^(N)/omega23 at a given enhancement.
double ib_theory(double enhancement, const SystemParams<double>& sys);

std::vector<BeatRow> beat_summary(std::span<const OdFit> fits, const SystemParams<double>& sys);

} // namespace qbeat
