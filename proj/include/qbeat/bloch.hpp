#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "qbeat/errors.hpp"
#include "qbeat/params.hpp"
#include "qbeat/rk4.hpp"

namespace qbeat {

/// Atomic density matrix; index 0, 1, 2 <-> levels |1>, |2>, |3>.
template <typename Scalar = double>
using DensityMatrix3 = Eigen::Matrix<std::complex<Scalar>, 3, 3>;

template <typename Scalar = double>
struct BlochTrajectory {
    std::vector<Scalar> times;
    std::vector<DensityMatrix3<Scalar>> states;
    Scalar step = 0;
};

/// Pure state |level><level| for level in {1, 2, 3}.
template <typename Scalar = double>
DensityMatrix3<Scalar> projector(int level) {
    if (level < 1 || level > 3) {
        throw ValidationError(fmt::format("level must be 1, 2 or 3 (got {})", level));
    }
    DensityMatrix3<Scalar> rho = DensityMatrix3<Scalar>::Zero();
    rho(level - 1, level - 1) = Scalar(1);
    return rho;
}

template <typename Derived>
auto hermitian_part(const Eigen::MatrixBase<Derived>& rho) {
    using Plain = typename Derived::PlainObject;
    return Plain((rho + rho.adjoint()) / typename Derived::RealScalar(2));
}

template <typename Scalar>
Scalar hermiticity_error(const DensityMatrix3<Scalar>& rho) {
    return (rho - rho.adjoint()).cwiseAbs().maxCoeff();
}

template <typename Scalar>
Scalar trace_error(const DensityMatrix3<Scalar>& rho) {
    return std::abs(rho.trace() - std::complex<Scalar>(1));
}

/// Smallest eigenvalue of the Hermitian part.
template <typename Scalar>
Scalar min_eigenvalue(const DensityMatrix3<Scalar>& rho) {
    Eigen::SelfAdjointEigenSolver<DensityMatrix3<Scalar>> es(hermitian_part(rho), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

/// Throws ValidationError unless rho is Hermitian, unit trace and has
/// populations in [0, 1] up to the stated tolerances.
template <typename Scalar>
void validate(const DensityMatrix3<Scalar>& rho) {
    if (!rho.allFinite()) {
        throw ValidationError("density matrix has non-finite entries");
    }
    if (hermiticity_error(rho) > Scalar(1e-12)) {
        throw ValidationError(fmt::format("density matrix not Hermitian (error {:.3g})",
                                          static_cast<double>(hermiticity_error(rho))));
    }
    if (trace_error(rho) > Scalar(1e-9)) {
        throw ValidationError(fmt::format("density matrix trace deviates from 1 by {:.3g}",
                                          static_cast<double>(trace_error(rho))));
    }
    for (int k = 0; k < 3; ++k) {
        const Scalar p = rho(k, k).real();
        if (p < Scalar(-1e-9) || p > Scalar(1) + Scalar(1e-9)) {
            throw ValidationError(fmt::format("population rho{}{} = {} outside [0, 1]", k + 1, k + 1,
                                              static_cast<double>(p)));
        }
    }
}

/// Time derivative of the single-atom density matrix under the weak drive,
/// in the frame rotating with the drive. Rabi frequencies are multiplied by
/// rabi_scale. Driven damping rates are taken equal to the free rates.
template <typename Scalar>
DensityMatrix3<Scalar> bloch_rhs(const DensityMatrix3<Scalar>& rho, const SystemParams<Scalar>& sys,
                                 const DriveConfig<Scalar>& drive, Scalar rabi_scale = Scalar(1)) {
    using C = std::complex<Scalar>;
    const C i(0, 1);
    const Scalar o2 = rabi_scale * drive.rabi2;
    const Scalar o3 = rabi_scale * drive.rabi3;
    const Scalar d2 = drive.detuning2;
    const Scalar d3 = drive.detuning3;
    const Scalar g22 = sys.gamma22;
    const Scalar g33 = sys.gamma33;
    const Scalar h23 = sys.gamma23 / Scalar(2);
    const Scalar w = sys.omega23;
    const Scalar gavg = (g22 + g33) / Scalar(2);

    const C r11 = rho(0, 0), r22 = rho(1, 1), r33 = rho(2, 2);
    const C r12 = rho(0, 1), r21 = rho(1, 0);
    const C r13 = rho(0, 2), r31 = rho(2, 0);
    const C r23 = rho(1, 2), r32 = rho(2, 1);

    DensityMatrix3<Scalar> d;
    d(2, 2) = i * o3 * (r13 - r31) - g33 * r33 - h23 * r23 - h23 * r32;
    d(1, 1) = i * o2 * (r12 - r21) - g22 * r22 - h23 * r23 - h23 * r32;
    d(0, 0) = -i * o3 * (r13 - r31) - i * o2 * (r12 - r21) + g33 * r33 + g22 * r22 +
              sys.gamma23 * (r23 + r32);
    d(2, 0) = -i * o2 * r32 - i * o3 * (r33 - r11) - (g33 / Scalar(2) - i * d3) * r31 - h23 * r21;
    d(0, 2) = i * o2 * r23 + i * o3 * (r33 - r11) - (g33 / Scalar(2) + i * d3) * r13 - h23 * r12;
    d(1, 0) = -i * o3 * r23 - i * o2 * (r22 - r11) - (g22 / Scalar(2) - i * d2) * r21 - h23 * r31;
    d(0, 1) = i * o3 * r32 + i * o2 * (r22 - r11) - (g22 / Scalar(2) + i * d2) * r12 - h23 * r13;
    d(2, 1) = -i * o2 * r31 + i * o3 * r12 - (gavg - i * w) * r32 - h23 * (r22 + r33);
    d(1, 2) = i * o2 * r13 - i * o3 * r21 - (gavg + i * w) * r23 - h23 * (r22 + r33);
    return d;
}

/// One laser drives both transitions, so its frame fixes
/// detuning3 - detuning2 = omega23. Any other pair is not a physical frame and
/// the equations lose positivity.
template <typename Scalar>
void validate_frame(const SystemParams<Scalar>& sys, const DriveConfig<Scalar>& drive) {
    const Scalar gap = drive.detuning3 - drive.detuning2;
    if (!(std::abs(gap - sys.omega23) <= Scalar(1e-9) * sys.omega23)) {
        throw ValidationError(fmt::format("detuning3 - detuning2 = {} rad/ns must equal omega23 = {} rad/ns",
                                          static_cast<double>(gap), static_cast<double>(sys.omega23)));
    }
}

/// Largest step that resolves the fastest scale of the driven problem.
template <typename Scalar>
Scalar max_bloch_step(const SystemParams<Scalar>& sys, const DriveConfig<Scalar>& drive) {
    const Scalar fastest = std::max({sys.omega23, std::abs(drive.rabi2), std::abs(drive.rabi3),
                                     sys.enhancement() * sys.gamma22, std::abs(drive.detuning2),
                                     std::abs(drive.detuning3)});
    return Scalar(0.01) / fastest;
}

/// Fixed-step RK4 integration of the Bloch equations over [t_begin, t_end].
///
/// `rabi_scale(t)` modulates the drive amplitude (constant 1 if empty).
/// Every `stride`-th state is stored, plus the final one. The running state
/// is re-Hermitized after each step; a trace drift above 1e-6 throws.
template <typename Scalar>
BlochTrajectory<Scalar> integrate_bloch(const DensityMatrix3<Scalar>& rho0, const SystemParams<Scalar>& sys,
                                        const DriveConfig<Scalar>& drive, Scalar t_begin, Scalar t_end, Scalar dt,
                                        const std::function<Scalar(Scalar)>& rabi_scale = {},
                                        std::size_t stride = 1) {
    validate(rho0);
    validate_frame(sys, drive);
    if (!(t_end >= t_begin)) {
        throw ValidationError(fmt::format("time span [{}, {}] is reversed", static_cast<double>(t_begin),
                                          static_cast<double>(t_end)));
    }
    const Scalar dt_max = max_bloch_step(sys, drive);
    if (!(dt > 0) || dt > dt_max * (Scalar(1) + Scalar(1e-12))) {
        throw ValidationError(fmt::format("Bloch step {} ns exceeds limit {} ns", static_cast<double>(dt),
                                          static_cast<double>(dt_max)));
    }
    if (stride == 0) {
        stride = 1;
    }

    const std::size_t n = step_count(t_end - t_begin, dt);
    const Scalar h = n > 0 ? (t_end - t_begin) / Scalar(n) : dt;
    auto rhs = [&](Scalar t, const DensityMatrix3<Scalar>& rho) -> DensityMatrix3<Scalar> {
        const Scalar s = rabi_scale ? rabi_scale(t) : Scalar(1);
        return bloch_rhs(rho, sys, drive, s);
    };

    BlochTrajectory<Scalar> traj;
    traj.step = h;
    traj.times.reserve(n / stride + 2);
    traj.states.reserve(n / stride + 2);
    traj.times.push_back(t_begin);
    traj.states.push_back(hermitian_part(rho0));

    DensityMatrix3<Scalar> rho = traj.states.back();
    Scalar worst_drift = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const Scalar t = t_begin + Scalar(k) * h;
        rho = hermitian_part(rk4_step(rhs, t, rho, h));
        worst_drift = std::max(worst_drift, trace_error(rho));
        if (!(worst_drift <= Scalar(1e-6))) {
            throw NumericError(fmt::format("Bloch integration failed: trace drift {:.3g} at t = {} ns",
                                           static_cast<double>(worst_drift), static_cast<double>(t + h)));
        }
        if ((k + 1) % stride == 0 || k + 1 == n) {
            traj.times.push_back(t_begin + Scalar(k + 1) * h);
            traj.states.push_back(rho);
        }
    }
    return traj;
}

namespace detail {

// Real coordinates of a Hermitian 3x3 matrix:
// [rho11, rho22, rho33, Re rho21, Im rho21, Re rho31, Im rho31, Re rho32, Im rho32].
template <typename Scalar>
Eigen::Matrix<Scalar, 9, 1> to_real_coords(const DensityMatrix3<Scalar>& m) {
    Eigen::Matrix<Scalar, 9, 1> x;
    x << m(0, 0).real(), m(1, 1).real(), m(2, 2).real(), m(1, 0).real(), m(1, 0).imag(), m(2, 0).real(),
        m(2, 0).imag(), m(2, 1).real(), m(2, 1).imag();
    return x;
}

template <typename Scalar>
DensityMatrix3<Scalar> from_real_coords(const Eigen::Matrix<Scalar, 9, 1>& x) {
    using C = std::complex<Scalar>;
    DensityMatrix3<Scalar> m;
    m(0, 0) = x(0);
    m(1, 1) = x(1);
    m(2, 2) = x(2);
    m(1, 0) = C(x(3), x(4));
    m(2, 0) = C(x(5), x(6));
    m(2, 1) = C(x(7), x(8));
    m(0, 1) = std::conj(m(1, 0));
    m(0, 2) = std::conj(m(2, 0));
    m(1, 2) = std::conj(m(2, 1));
    return m;
}

} // namespace detail

/// Steady state of the constantly driven Bloch equations from a direct
/// linear solve: the nine real stationarity conditions with the rho11
/// equation replaced by the trace constraint.
template <typename Scalar>
DensityMatrix3<Scalar> steady_state(const SystemParams<Scalar>& sys, const DriveConfig<Scalar>& drive) {
    validate_frame(sys, drive);
    using Mat9 = Eigen::Matrix<Scalar, 9, 9>;
    using Vec9 = Eigen::Matrix<Scalar, 9, 1>;
    Mat9 generator;
    for (int k = 0; k < 9; ++k) {
        const Vec9 e = Vec9::Unit(k);
        generator.col(k) = detail::to_real_coords<Scalar>(bloch_rhs(detail::from_real_coords(e), sys, drive));
    }
    generator.row(0) << 1, 1, 1, 0, 0, 0, 0, 0, 0;
    const Vec9 rhs = Vec9::Unit(0);

    Eigen::FullPivLU<Mat9> lu(generator);
    lu.setThreshold(Scalar(1e-12));
    if (!lu.isInvertible()) {
        throw NumericError(fmt::format("no unique steady state: Bloch generator has rank {} < 9", lu.rank()));
    }
    const Vec9 x = lu.solve(rhs);
    return detail::from_real_coords<Scalar>(x);
}

/// Drive intensity factor of the switch-off edge: 1 before t0, a truncated
/// cos^4((pi/2)(t - t0)/tau) over the fall time, 0 afterwards.
template <typename Scalar>
Scalar turnoff_ramp(Scalar t, Scalar t0, Scalar tau) {
    if (t <= t0) {
        return Scalar(1);
    }
    if (t >= t0 + tau) {
        return Scalar(0);
    }
    const Scalar c = std::cos(std::numbers::pi_v<Scalar> / Scalar(2) * (t - t0) / tau);
    return c * c * c * c;
}

/// Rabi-frequency factor during the switch-off: cos^ramp_exponent of the
/// same argument (cos^2, the square root of the intensity, by default).
template <typename Scalar>
Scalar turnoff_rabi_scale(Scalar t, const DriveConfig<Scalar>& drive) {
    if (t <= drive.ramp_t0) {
        return Scalar(1);
    }
    if (t >= drive.ramp_t0 + drive.ramp_tau) {
        return Scalar(0);
    }
    const Scalar c = std::cos(std::numbers::pi_v<Scalar> / Scalar(2) * (t - drive.ramp_t0) / drive.ramp_tau);
    return std::pow(c, drive.ramp_exponent);
}

/// Post-extinction wait before the decay analysis window opens.
inline constexpr double turnoff_wait_ns = 0.5;

/// Full switch-off transient from ramp_t0 to ramp_t0 + ramp_tau + 0.5 ns.
template <typename Scalar>
BlochTrajectory<Scalar> turnoff_trajectory(const DensityMatrix3<Scalar>& rho_s, const SystemParams<Scalar>& sys,
                                           const DriveConfig<Scalar>& drive, Scalar dt = Scalar(1e-3),
                                           std::size_t stride = 1) {
    validate(drive);
    const Scalar t_begin = drive.ramp_t0;
    const Scalar t_end = drive.ramp_t0 + drive.ramp_tau + Scalar(turnoff_wait_ns);
    return integrate_bloch<Scalar>(
        rho_s, sys, drive, t_begin, t_end, dt, [&drive](Scalar t) { return turnoff_rabi_scale(t, drive); },
        stride);
}

/// State at the start of the decay window after the switch-off transient.
template <typename Scalar>
DensityMatrix3<Scalar> simulate_turnoff(const DensityMatrix3<Scalar>& rho_s, const SystemParams<Scalar>& sys,
                                        const DriveConfig<Scalar>& drive, Scalar dt = Scalar(1e-3)) {
    const auto traj = turnoff_trajectory(rho_s, sys, drive, dt, std::numeric_limits<std::size_t>::max());
    return traj.states.back();
}

} // namespace qbeat
