#pragma once

#include <cmath>
#include <cstddef>

namespace qbeat {

/// One classical fourth-order Runge-Kutta step of dy/dt = f(t, y).
/// State is any Eigen dense type (or anything closed under + and scalar *).
template <typename State, typename Scalar, typename Rhs>
State rk4_step(Rhs&& f, Scalar t, const State& y, Scalar h) {
    const Scalar half = h / Scalar(2);
    const State k1 = f(t, y);
    const State k2 = f(t + half, State(y + half * k1));
    const State k3 = f(t + half, State(y + half * k2));
    const State k4 = f(t + h, State(y + h * k3));
    return State(y + (h / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4));
}

/// Number of equal steps covering `span` with step no larger than `max_step`.
template <typename Scalar>
std::size_t step_count(Scalar span, Scalar max_step) {
    if (span <= 0) {
        return 0;
    }
    const Scalar ratio = span / max_step;
    const auto n = static_cast<std::size_t>(std::ceil(ratio - Scalar(1e-9) * ratio));
    return n == 0 ? 1 : n;
}

} // namespace qbeat
