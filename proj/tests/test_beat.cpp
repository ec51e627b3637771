#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "qbeat/analysis.hpp"
#include "qbeat/beat.hpp"

using namespace qbeat;
using C = std::complex<double>;

namespace {

// Reference values from a 40-digit evaluation of the single-atom constants.
const C delta_sq_ref(0.57711486271288055, -0.01295067557056721);
const C delta_ref(0.75972857526997996, -0.0085232252623675567);
constexpr double ib_ref = 0.028007346189164371;
constexpr double phi_ref = 0.050370579862484403;

// Roots of s^2 + b s + c by the cancellation-free formula.
std::pair<C, C> quadratic_roots(C b, C c) {
    C disc = std::sqrt(b * b - 4.0 * c);
    if (std::real(std::conj(b) * disc) < 0) {
        disc = -disc;
    }
    const C q = -0.5 * (b + disc);
    return {q, c / q};
}

double nearest_distance(C s, std::pair<C, C> roots) {
    return std::min(std::abs(s - roots.first), std::abs(s - roots.second));
}

CollectiveRates<double> rates_at(double nf) { return collective_rates(rb85_system(nf, 1.0)); }

const double omega = rb85_system<double>().omega23;

} // namespace

TEST_CASE("delta for the single-atom constants") {
    const auto rates = rates_at(0);
    const C d = compute_delta(rates, omega);
    CHECK(std::abs(d * d - delta_sq_ref) < 1e-15);
    CHECK(d.real() == doctest::Approx(delta_ref.real()).epsilon(1e-14));
    CHECK(d.imag() == doctest::Approx(delta_ref.imag()).epsilon(1e-12));
}

TEST_CASE("delta with symmetric damping is real") {
    const auto rates = CollectiveRates<double>::from_primary(0.05, 0.05);
    const C d = compute_delta(rates, omega);
    CHECK(d.imag() == 0.0);
    CHECK(d.real() == doctest::Approx(std::sqrt(omega * omega - 0.05 * 0.05)).epsilon(1e-15));

    const auto p = poles(rates, omega);
    CHECK(p.s2_plus.real() == doctest::Approx(-0.025).epsilon(1e-15));
    CHECK(p.s2_minus.real() == doctest::Approx(-0.025).epsilon(1e-15));
    CHECK(p.s3_plus.real() == doctest::Approx(-0.025).epsilon(1e-15));
    CHECK(p.s3_minus.real() == doctest::Approx(-0.025).epsilon(1e-15));
}

TEST_CASE("delta branch keeps Im(delta) with the sign of Gamma_d") {
    for (double nf : {0.0, 1.0, 4.6, 20.0}) {
        const auto rates = rates_at(nf);
        CHECK(compute_delta(rates, omega).imag() * rates.gamma_d_N >= 0);
    }
}

TEST_CASE("second-order expansion of delta") {
    for (double nf : {0.0, 1.0, 2.0, 4.6}) {
        const auto rates = rates_at(nf);
        const double err = std::abs(compute_delta(rates, omega) - expanded_delta(rates, omega));
        const double g = rates.gamma22_N / omega;
        CHECK(err <= g * g * g * omega);
    }
}

TEST_CASE("exact poles solve their quadratics") {
    for (double nf : {0.0, 1.0, 2.0, 4.6, 30.0}) {
        const auto r = rates_at(nf);
        const auto p = poles(r, omega);
        const C i(0, 1);
        const auto roots2 = quadratic_roots(r.gamma_avg_N - i * omega, -i * omega * r.gamma22_N / 2.0);
        const auto roots3 = quadratic_roots(r.gamma_avg_N + i * omega, i * omega * r.gamma33_N / 2.0);
        const double scale = omega;
        CHECK(nearest_distance(p.s2_plus, roots2) <= 1e-12 * scale);
        CHECK(nearest_distance(p.s2_minus, roots2) <= 1e-12 * scale);
        CHECK(nearest_distance(p.s3_plus, roots3) <= 1e-12 * scale);
        CHECK(nearest_distance(p.s3_minus, roots3) <= 1e-12 * scale);
    }
}

TEST_CASE("single-atom pole real parts") {
    const auto r = rates_at(0);
    const auto p = poles(r, omega);
    CHECK(p.s2_minus.real() == doctest::Approx(-r.gamma22_N / 2).epsilon(1e-3));
    CHECK(p.s2_plus.real() == doctest::Approx(-r.gamma33_N / 2).epsilon(1e-3));
    CHECK(p.s3_minus.real() == doctest::Approx(-r.gamma22_N / 2).epsilon(1e-3));
    CHECK(p.s3_plus.real() == doctest::Approx(-r.gamma33_N / 2).epsilon(1e-3));
}

TEST_CASE("lossless limit") {
    const auto r = CollectiveRates<double>::from_primary(0.0, 0.0);
    const auto p = poles(r, omega);
    CHECK(std::abs(p.s2_plus - C(0, omega)) < 1e-15);
    CHECK(std::abs(p.s2_minus) < 1e-15);
    CHECK(std::abs(p.s3_plus) < 1e-15);
    CHECK(std::abs(p.s3_minus - C(0, -omega)) < 1e-15);
}

TEST_CASE("expanded poles track the exact ones") {
    for (double nf = 0; nf <= 4.6 + 1e-9; nf += 0.2) {
        const auto r = rates_at(nf);
        const auto ex = poles(r, omega);
        const auto ap = poles(r, omega, PoleMode::expanded);
        const double g = r.gamma22_N / omega;
        const double bound = g * g * g * omega;
        CHECK(std::abs(ex.s2_plus - ap.s2_plus) <= bound);
        CHECK(std::abs(ex.s2_minus - ap.s2_minus) <= bound);
        CHECK(std::abs(ex.s3_plus - ap.s3_plus) <= bound);
        CHECK(std::abs(ex.s3_minus - ap.s3_minus) <= bound);
    }
}

TEST_CASE("expanded poles warn outside the well-separated regime") {
    CHECK_FALSE(poles(rates_at(2.0), omega, PoleMode::expanded).warning.has_value());
    CHECK(poles(rates_at(5.0), omega, PoleMode::expanded).warning.has_value());
    CHECK_FALSE(poles(rates_at(5.0), omega).warning.has_value());
}

TEST_CASE("amplitudes at t = 0") {
    for (double nf : {0.0, 4.6}) {
        const auto a = amplitudes_exact(0.0, rates_at(nf), omega);
        CHECK(std::abs(a.c2 - 1.0) < 1e-15);
        CHECK(std::abs(a.c3) < 1e-16);
    }
    const auto r = rates_at(0);
    const auto approx = amplitudes_approx(0.0, r, omega);
    const C d = compute_delta(r, omega);
    const double q = r.gamma23_N / (2 * omega);
    CHECK(std::abs(approx.c2 - (1.0 - q * q * std::conj(d) / d)) < 1e-15);
    CHECK(std::abs(approx.c3) < 1e-16);
}

TEST_CASE("decoupled levels") {
    const auto r = CollectiveRates<double>::from_primary(0.04, 0.0);
    for (double t : {0.0, 3.3, 50.0, 180.0}) {
        const auto a = amplitudes_exact(t, r, omega);
        CHECK(std::abs(a.c3) < 1e-15);
        CHECK(std::abs(a.c2) == doctest::Approx(std::exp(-0.02 * t)).epsilon(1e-13));
        const auto b = amplitudes_approx(t, r, omega);
        CHECK(std::abs(b.c2 - a.c2) < 1e-14);
        CHECK(std::abs(b.c3 - a.c3) < 1e-14);
        CHECK(intensity_exact(t, r, omega) == doctest::Approx(std::exp(-0.04 * t)).epsilon(1e-12));
        CHECK(intensity_model(t, r, omega) == doctest::Approx(std::exp(-0.04 * t)).epsilon(1e-14));
    }
    const auto traj = integrate_amplitudes(0.0, 200.0, 0.01 / omega, r, omega);
    for (std::size_t k = 0; k < traj.times.size(); k += 997) {
        CHECK(std::abs(traj.values[k].c2) == doctest::Approx(std::exp(-0.02 * traj.times[k])).epsilon(1e-10));
    }
}

TEST_CASE("approximate amplitudes stay within second order of exact") {
    for (double nf : {0.0, 1.0, 2.0}) {
        const auto r = rates_at(nf);
        const double g = r.gamma22_N / omega;
        double worst = 0;
        for (double t = 0; t <= 200; t += 0.25) {
            const auto a = amplitudes_exact(t, r, omega);
            const auto b = amplitudes_approx(t, r, omega);
            worst = std::max({worst, std::abs(a.c2 - b.c2), std::abs(a.c3 - b.c3)});
        }
        CHECK(worst <= 5 * g * g);
    }
}

TEST_CASE("closed form matches the integrated amplitude equations") {
    for (double nf : {0.0, 1.0, 2.0, 4.6}) {
        const auto r = rates_at(nf);
        const auto traj = integrate_amplitudes(0.0, 200.0, 0.01 / omega, r, omega);
        double worst = 0;
        for (std::size_t k = 0; k < traj.times.size(); ++k) {
            const auto a = amplitudes_exact(traj.times[k], r, omega);
            worst = std::max({worst, std::abs(a.c2 - traj.values[k].c2), std::abs(a.c3 - traj.values[k].c3)});
        }
        CHECK(worst <= 1e-8);
    }
}

TEST_CASE("closed form satisfies the amplitude equations") {
    const auto r = rates_at(1.0);
    const double h = 1e-4;
    for (int k = 0; k < 100; ++k) {
        const double t = 0.5 + 2.0 * k;
        const auto ap = amplitudes_exact(t + h, r, omega);
        const auto am = amplitudes_exact(t - h, r, omega);
        const auto a = amplitudes_exact(t, r, omega);
        const Eigen::Vector2cd fd((ap.c2 - am.c2) / (2 * h), (ap.c3 - am.c3) / (2 * h));
        const Eigen::Vector2cd rhs = amplitude_rhs(t, Eigen::Vector2cd(a.c2, a.c3), r, omega);
        CHECK((fd - rhs).norm() <= 1e-6 * rhs.norm());
    }
}

TEST_CASE("norm never increases") {
    const auto r = rates_at(2.0);
    double previous = 1.0;
    for (double t = 0; t <= 200; t += 0.1) {
        const auto a = amplitudes_exact(t, r, omega);
        const double n = std::norm(a.c2) + std::norm(a.c3);
        CHECK(n <= previous + 1e-12);
        previous = n;
    }
    const auto traj = integrate_amplitudes(0.0, 100.0, 0.01 / omega, r, omega);
    for (std::size_t k = 1; k < traj.values.size(); ++k) {
        const auto& a = traj.values[k - 1];
        const auto& b = traj.values[k];
        CHECK(std::norm(b.c2) + std::norm(b.c3) <= std::norm(a.c2) + std::norm(a.c3) + 1e-12);
    }
}

TEST_CASE("integration step limit") {
    CHECK_THROWS_AS(integrate_amplitudes(0.0, 1.0, 0.1, rates_at(0), omega), ValidationError);
    CHECK_THROWS_AS(integrate_amplitudes(1.0, 0.0, 0.01, rates_at(0), omega), ValidationError);
}

TEST_CASE("beat constants") {
    const auto r = rates_at(0);
    CHECK(beat_amplitude(r, omega) == doctest::Approx(ib_ref).epsilon(1e-14));
    CHECK(beat_phase(r, omega) == doctest::Approx(phi_ref).epsilon(1e-14));
    CHECK(r.gamma22_N / omega == doctest::Approx(6.1 / 121.0).epsilon(1e-14));

    const auto sys = rb85_system<double>();
    const auto r56 = rates_for_enhancement(sys, 5.6);
    CHECK(beat_amplitude(r56, omega) == doctest::Approx(0.15684113865932048).epsilon(1e-13));
    CHECK(std::tan(beat_phase(r56, omega)) == doctest::Approx(0.28231404958677686).epsilon(1e-13));
    CHECK(beat_phase(r56, omega) == doctest::Approx(0.27515322879931271).epsilon(1e-13));

    const auto dark = CollectiveRates<double>::from_primary(0.04, 0.0);
    CHECK(beat_amplitude(dark, omega) == 0.0);
    CHECK(beat_phase(CollectiveRates<double>::from_primary(0.0, 0.0), omega) == 0.0);
}

TEST_CASE("collective scaling of the beat constants") {
    const auto base = rates_at(0);
    const double ib = beat_amplitude(base, omega);
    const double tphi = std::tan(beat_phase(base, omega));
    for (double x : {0.5, 1.0, 3.7, 4.6}) {
        const auto r = rates_at(x);
        CHECK(beat_amplitude(r, omega) == doctest::Approx((1 + x) * ib).epsilon(1e-14));
        CHECK(std::tan(beat_phase(r, omega)) == doctest::Approx((1 + x) * tphi).epsilon(1e-13));
    }
}

TEST_CASE("intensity model values") {
    const auto r = rates_at(0);
    CHECK(intensity_model(0.0, r, omega, IntensityModel::two_term) ==
          doctest::Approx(1.0014101497871615).epsilon(1e-14));
    const double q2 = 1.96102860139925e-4;
    for (double t : {0.0, 10.0, 77.0}) {
        const double diff = intensity_model(t, r, omega, IntensityModel::three_term) -
                            intensity_model(t, r, omega, IntensityModel::two_term);
        CHECK(diff == doctest::Approx(q2 * std::exp(-r.gamma33_N * t)).epsilon(1e-9));
        CHECK(diff <= 2e-4);
    }
    CHECK(intensity_model(5.0, r, omega, IntensityModel::exact) == intensity_exact(5.0, r, omega));
    CHECK(std::string(to_string(IntensityModel::two_term)) == "two-term");
    CHECK(std::string(to_string(IntensityModel::three_term)) == "three-term");
}

TEST_CASE("exact intensity is the three-term form with a negated beat") {
    for (double nf : {0.0, 1.0, 2.0}) {
        const auto r = rates_at(nf);
        const double ib = beat_amplitude(r, omega);
        const double phi = beat_phase(r, omega);
        const double g = r.gamma22_N / omega;
        for (double t = 0; t <= 150; t += 0.7) {
            const double beat = ib * std::exp(-r.gamma_avg_N * t) * std::sin(omega * t + phi);
            const double negated = intensity_model(t, r, omega, IntensityModel::three_term) - 2 * beat;
            CHECK(std::abs(intensity_exact(t, r, omega) - negated) <= 5 * g * g);
        }
    }
}

TEST_CASE("intensity beat amplitude at N f = 4.6") {
    const auto r = rates_at(4.6);
    // Half the peak-to-peak excursion of the residual over the first periods,
    // divided by the envelope.
    double hi = -1, lo = 1;
    for (double t = 0; t < 2 * std::numbers::pi / omega; t += 1e-3) {
        const double res = (intensity_model(t, r, omega, IntensityModel::two_term) - std::exp(-r.gamma22_N * t)) /
                           std::exp(-r.gamma_avg_N * t);
        hi = std::max(hi, res);
        lo = std::min(lo, res);
    }
    CHECK((hi - lo) / 2 == doctest::Approx(0.1568).epsilon(1e-3));
}

TEST_CASE("intensity trace sampling") {
    const auto r = rates_at(0);
    const auto tr = intensity_trace(2.0, 0.5, r, omega, IntensityModel::three_term);
    CHECK(tr.times.size() == 4);
    CHECK(tr.times.back() == 1.5);
    CHECK(intensity_trace(0.0, 0.5, r, omega, IntensityModel::two_term).times.empty());
    CHECK_THROWS_AS(intensity_trace(1.0, 0.0, r, omega, IntensityModel::two_term), ValidationError);
}

TEST_CASE("beat frequency from the exact intensity") {
    const double bw = 0.5;
    for (double nf : {0.0, 0.5, 1.0, 2.0, 4.6}) {
        CAPTURE(nf);
        const auto r = rates_at(nf);
        std::vector<double> residual;
        for (double t = 0; t < 120; t += bw) {
            residual.push_back(intensity_exact(t, r, omega) - std::exp(-r.gamma22_N * t));
        }
        const auto s = magnitude_spectrum(residual, bw, 8);
        const double beat = compute_delta(r, omega).real() / (2 * std::numbers::pi) * 1e3;
        if (nf <= 1.0) {
            CHECK(std::abs(s.peak_frequency() - beat) <= s.resolution_MHz);
            CHECK(std::abs(s.peak_frequency() - 121.0) <= s.resolution_MHz);
        } else {
            // Broad lines are pulled by their negative-frequency image and the
            // window; the peak still sits inside the half-width.
            const double half_width = r.gamma_avg_N / 2 / (2 * std::numbers::pi) * 1e3;
            CHECK(std::abs(s.peak_frequency() - beat) <= half_width);
        }
    }
}
