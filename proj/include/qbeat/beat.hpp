#pragma once

#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "qbeat/errors.hpp"
#include "qbeat/params.hpp"
#include "qbeat/rk4.hpp"

// Post-switch-off dynamics of the shared single excitation. Amplitudes are
// interaction-picture coefficients scaled so that c2(0) = 1; the 1/sqrt(N)
// and N^2 prefactors cancel in normalized intensities. Time is emitter-local.

namespace qbeat {

template <typename Scalar = double>
struct AmplitudePair {
    std::complex<Scalar> c2;
    std::complex<Scalar> c3;

    Scalar norm2() const { return std::norm(c2) + std::norm(c3); }
};

enum class PoleMode { exact, expanded };

template <typename Scalar = double>
struct PoleSet {
    std::complex<Scalar> delta;
    std::complex<Scalar> s2_plus;
    std::complex<Scalar> s2_minus;
    std::complex<Scalar> s3_plus;
    std::complex<Scalar> s3_minus;
    PoleMode mode = PoleMode::exact;
    std::optional<std::string> warning;
};

enum class IntensityModel { two_term, three_term, exact };

inline const char* to_string(IntensityModel m) {
    switch (m) {
    case IntensityModel::two_term:
        return "two-term";
    case IntensityModel::three_term:
        return "three-term";
    case IntensityModel::exact:
        return "exact";
    }
    return "unknown";
}

template <typename Scalar = double>
struct IntensityTrace {
    std::vector<Scalar> times;
    std::vector<Scalar> intensity;
    IntensityModel model = IntensityModel::exact;
};

/// delta = sqrt(omega23^2 - Gavg^2 + 2 i omega23 Gd), with the branch chosen
/// so that Im(delta) has the sign of Gd (and Re(delta) >= 0 when Gd = 0).
template <typename Scalar>
std::complex<Scalar> compute_delta(const CollectiveRates<Scalar>& rates, Scalar omega23) {
    using C = std::complex<Scalar>;
    const C arg(omega23 * omega23 - rates.gamma_avg_N * rates.gamma_avg_N,
                Scalar(2) * omega23 * rates.gamma_d_N);
    C delta = std::sqrt(arg);
    if (delta.imag() * rates.gamma_d_N < 0 || (rates.gamma_d_N == 0 && delta.real() < 0)) {
        delta = -delta;
    }
    return delta;
}

/// Second-order expansion of delta for Gamma << omega23.
template <typename Scalar>
std::complex<Scalar> expanded_delta(const CollectiveRates<Scalar>& rates, Scalar omega23) {
    const Scalar q = rates.gamma23_N / omega23;
    const Scalar half_q2 = q * q / Scalar(2);
    return {omega23 * (Scalar(1) - half_q2), rates.gamma_d_N * (Scalar(1) + half_q2)};
}

/// Poles of the Laplace-domain amplitudes. `expanded` uses the second-order
/// forms and attaches a warning outside the well-separated regime.
template <typename Scalar>
PoleSet<Scalar> poles(const CollectiveRates<Scalar>& rates, Scalar omega23, PoleMode mode = PoleMode::exact) {
    using C = std::complex<Scalar>;
    const C i(0, 1);
    PoleSet<Scalar> p;
    p.mode = mode;
    p.delta = compute_delta(rates, omega23);
    if (mode == PoleMode::exact) {
        const C base2 = -rates.gamma_avg_N / Scalar(2) + i * omega23 / Scalar(2);
        const C base3 = -rates.gamma_avg_N / Scalar(2) - i * omega23 / Scalar(2);
        p.s2_plus = base2 + i * p.delta / Scalar(2);
        p.s2_minus = base2 - i * p.delta / Scalar(2);
        p.s3_plus = base3 + i * p.delta / Scalar(2);
        p.s3_minus = base3 - i * p.delta / Scalar(2);
        return p;
    }

    const Scalar g22 = rates.gamma22_N, g33 = rates.gamma33_N, gd = rates.gamma_d_N;
    const Scalar w2 = omega23 * omega23;
    const Scalar q = rates.gamma23_N / (Scalar(2) * omega23);
    const Scalar shift = omega23 * q * q;
    const Scalar re_plus = -g33 / Scalar(2) * (Scalar(1) + gd * g22 / (Scalar(2) * w2));
    const Scalar re_minus = -g22 / Scalar(2) * (Scalar(1) - gd * g33 / (Scalar(2) * w2));
    p.s2_plus = C(re_plus, omega23 - shift);
    p.s2_minus = C(re_minus, shift);
    p.s3_plus = C(re_plus, -shift);
    p.s3_minus = C(re_minus, -(omega23 - shift));
    if (!well_separated(rates, omega23)) {
        p.warning = fmt::format("expanded poles outside the well-separated regime (Gamma22N = {:.4g} > omega23/5 = {:.4g})",
                                static_cast<double>(rates.gamma22_N), static_cast<double>(omega23 / Scalar(5)));
    }
    return p;
}

/// Closed-form amplitudes from the inverse Laplace transform, c2(0) = 1, c3(0) = 0.
template <typename Scalar>
AmplitudePair<Scalar> amplitudes_exact(Scalar t, const CollectiveRates<Scalar>& rates, Scalar omega23) {
    using C = std::complex<Scalar>;
    const C i(0, 1);
    const C delta = compute_delta(rates, omega23);
    const Scalar gd = rates.gamma_d_N;
    const Scalar envelope = std::exp(-rates.gamma_avg_N * t / Scalar(2));
    const C up = std::exp(i * delta * t / Scalar(2));
    const C down = std::exp(-i * delta * t / Scalar(2));

    AmplitudePair<Scalar> a;
    a.c2 = envelope * std::exp(i * omega23 * t / Scalar(2)) / (Scalar(2) * delta) *
           ((-i * gd - omega23 + delta) * up + (i * gd + omega23 + delta) * down);
    a.c3 = i * rates.gamma23_N / (Scalar(2) * delta) * envelope * std::exp(-i * omega23 * t / Scalar(2)) *
           (up - down);
    return a;
}

/// Two-exponential approximation of the amplitudes for Gamma << omega23.
/// c2(0) differs from 1 at second order; that is a property of the truncation.
template <typename Scalar>
AmplitudePair<Scalar> amplitudes_approx(Scalar t, const CollectiveRates<Scalar>& rates, Scalar omega23) {
    using C = std::complex<Scalar>;
    const C i(0, 1);
    const C delta = compute_delta(rates, omega23);
    const Scalar q = rates.gamma23_N / (Scalar(2) * omega23);
    const Scalar e22 = std::exp(-rates.gamma22_N * t / Scalar(2));
    const Scalar e33 = std::exp(-rates.gamma33_N * t / Scalar(2));
    const C rot = std::exp(i * omega23 * t);

    AmplitudePair<Scalar> a;
    a.c2 = e22 - q * q * (std::conj(delta) / delta) * e33 * rot;
    a.c3 = -i * rates.gamma23_N / (Scalar(2) * delta) * (e22 * std::conj(rot) - e33);
    return a;
}

template <typename Scalar = double>
struct AmplitudeTrajectory {
    std::vector<Scalar> times;
    std::vector<AmplitudePair<Scalar>> values;
};

/// Right-hand side of the Born-Markov amplitude equations.
template <typename Scalar>
Eigen::Matrix<std::complex<Scalar>, 2, 1> amplitude_rhs(Scalar t, const Eigen::Matrix<std::complex<Scalar>, 2, 1>& c,
                                                        const CollectiveRates<Scalar>& rates, Scalar omega23) {
    using C = std::complex<Scalar>;
    const C phase = std::exp(C(0, omega23 * t));
    Eigen::Matrix<C, 2, 1> d;
    d(0) = -rates.gamma22_N / Scalar(2) * c(0) - rates.gamma23_N / Scalar(2) * phase * c(1);
    d(1) = -rates.gamma33_N / Scalar(2) * c(1) - rates.gamma23_N / Scalar(2) * std::conj(phase) * c(0);
    return d;
}

/// Fixed-step RK4 integration of the amplitude equations from c2 = 1, c3 = 0.
/// Serves as the independent check of the closed form.
template <typename Scalar>
AmplitudeTrajectory<Scalar> integrate_amplitudes(Scalar t_begin, Scalar t_end, Scalar dt,
                                                 const CollectiveRates<Scalar>& rates, Scalar omega23,
                                                 AmplitudePair<Scalar> initial = {std::complex<Scalar>(1),
                                                                                  std::complex<Scalar>(0)}) {
    using Vec = Eigen::Matrix<std::complex<Scalar>, 2, 1>;
    if (!(dt > 0) || dt > Scalar(0.01) / omega23 * (Scalar(1) + Scalar(1e-12))) {
        throw ValidationError(fmt::format("amplitude step {} ns does not resolve omega23 (limit {} ns)",
                                          static_cast<double>(dt), static_cast<double>(Scalar(0.01) / omega23)));
    }
    if (!(t_end >= t_begin)) {
        throw ValidationError("amplitude time span is reversed");
    }
    const std::size_t n = step_count(t_end - t_begin, dt);
    const Scalar h = n > 0 ? (t_end - t_begin) / Scalar(n) : dt;
    auto rhs = [&](Scalar t, const Vec& c) -> Vec { return amplitude_rhs(t, c, rates, omega23); };

    AmplitudeTrajectory<Scalar> out;
    out.times.reserve(n + 1);
    out.values.reserve(n + 1);
    Vec c(initial.c2, initial.c3);
    out.times.push_back(t_begin);
    out.values.push_back(initial);
    for (std::size_t k = 0; k < n; ++k) {
        const Scalar t = t_begin + Scalar(k) * h;
        c = rk4_step(rhs, t, c, h);
        out.times.push_back(t_begin + Scalar(k + 1) * h);
        out.values.push_back({c(0), c(1)});
    }
    return out;
}

/// Forward intensity |e^{-i omega23 t} c2 + (Gamma23/Gamma22) c3|^2 from the
/// closed-form amplitudes; equals 1 at t = 0.
///
/// Evaluated literally this carries the beat term with the opposite sign to
/// intensity_model(): I ~ e^{-G22 t} - Ib e^{-Gavg t} sin(omega23 t + phi).
template <typename Scalar>
Scalar intensity_exact(Scalar t, const CollectiveRates<Scalar>& rates, Scalar omega23,
                       Scalar gamma23_over_gamma22) {
    const auto a = amplitudes_exact(t, rates, omega23);
    const std::complex<Scalar> field = std::exp(std::complex<Scalar>(0, -omega23 * t)) * a.c2 +
                                       gamma23_over_gamma22 * a.c3;
    return std::norm(field);
}

template <typename Scalar>
Scalar intensity_exact(Scalar t, const CollectiveRates<Scalar>& rates, Scalar omega23) {
    return intensity_exact(t, rates, omega23, rates.gamma23_N / rates.gamma22_N);
}

/// Relative beat intensity Ib = Gamma33^(N) / omega23.
template <typename Scalar>
Scalar beat_amplitude(const CollectiveRates<Scalar>& rates, Scalar omega23) {
    return rates.gamma33_N / omega23;
}

/// Beat phase phi = arctan(Gamma22^(N) / omega23).
template <typename Scalar>
Scalar beat_phase(const CollectiveRates<Scalar>& rates, Scalar omega23) {
    return std::atan(rates.gamma22_N / omega23);
}

/// Normalized modulated decay
///   e^{-G22 t} [+ (G33 / 2 omega23)^2 e^{-G33 t}] + Ib e^{-Gavg t} sin(omega23 t + phi).
/// `three_term` keeps the small middle term; `two_term` is the fitting form.
/// `exact` forwards to intensity_exact().
template <typename Scalar>
Scalar intensity_model(Scalar t, const CollectiveRates<Scalar>& rates, Scalar omega23,
                       IntensityModel variant = IntensityModel::three_term) {
    if (variant == IntensityModel::exact) {
        return intensity_exact(t, rates, omega23);
    }
    const Scalar ib = beat_amplitude(rates, omega23);
    const Scalar phi = beat_phase(rates, omega23);
    Scalar value = std::exp(-rates.gamma22_N * t) +
                   ib * std::exp(-rates.gamma_avg_N * t) * std::sin(omega23 * t + phi);
    if (variant == IntensityModel::three_term) {
        const Scalar q = rates.gamma33_N / (Scalar(2) * omega23);
        value += q * q * std::exp(-rates.gamma33_N * t);
    }
    return value;
}

/// Samples t = 0, dt, 2 dt, ... strictly below t_max.
template <typename Scalar>
IntensityTrace<Scalar> intensity_trace(Scalar t_max, Scalar dt, const CollectiveRates<Scalar>& rates,
                                       Scalar omega23, IntensityModel variant) {
    if (!(dt > 0)) {
        throw ValidationError("trace step must be > 0");
    }
    if (!(t_max >= 0)) {
        throw ValidationError("trace length must be >= 0");
    }
    IntensityTrace<Scalar> trace;
    trace.model = variant;
    for (std::size_t k = 0;; ++k) {
        const Scalar t = Scalar(k) * dt;
        if (t >= t_max) {
            break;
        }
        trace.times.push_back(t);
        trace.intensity.push_back(intensity_model(t, rates, omega23, variant));
    }
    return trace;
}

} // namespace qbeat
