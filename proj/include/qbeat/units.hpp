#pragma once

#include <numbers>

// Internal convention: time in ns, angular frequency in rad/ns.
// Files and flags use ordinary frequency in MHz.

namespace qbeat {

template <typename Scalar = double>
inline constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;

/// Ordinary frequency in MHz -> angular frequency in rad/ns.
template <typename Scalar>
constexpr Scalar mhz_to_rad_per_ns(Scalar mhz) {
    return two_pi<Scalar> * mhz * Scalar(1e-3);
}

/// Angular frequency in rad/ns -> ordinary frequency in MHz.
template <typename Scalar>
constexpr Scalar rad_per_ns_to_mhz(Scalar rad_per_ns) {
    return rad_per_ns / (two_pi<Scalar> * Scalar(1e-3));
}

/// Reference constants for the 85Rb 5P3/2 F'=4 / F'=3 pair.
namespace rb85 {
inline constexpr double gamma22_MHz = 6.1;
inline constexpr double branching = 5.0 / 9.0;
inline constexpr double omega23_MHz = 121.0;
} // namespace rb85

} // namespace qbeat
