#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "qbeat/errors.hpp"
#include "qbeat/units.hpp"

namespace qbeat {

/// Physical rates of a V-type atom (ground |1>, excited |2>, |3>) plus the
/// cooperative parameters of the ensemble. All rates in rad/ns.
///
/// Only the product n_atoms * f_geom enters the physics; both are kept so
/// configuration files can state them separately.
template <typename Scalar = double>
struct SystemParams {
    Scalar gamma22 = 0;  ///< decay |2> -> |1>
    Scalar gamma33 = 0;  ///< decay |3> -> |1>
    Scalar gamma23 = 0;  ///< vacuum-induced cross damping
    Scalar omega23 = 0;  ///< excited-level splitting
    Scalar n_atoms = 0;
    Scalar f_geom = 0;

    Scalar cooperativity() const { return n_atoms * f_geom; }
    Scalar enhancement() const { return Scalar(1) + cooperativity(); }
    Scalar branching() const { return gamma33 / gamma22; }
};

/// Rates after the collective substitution Gamma_jl -> (1 + N f) Gamma_jl.
template <typename Scalar = double>
struct CollectiveRates {
    Scalar gamma22_N = 0;
    Scalar gamma33_N = 0;
    Scalar gamma23_N = 0;
    Scalar gamma_avg_N = 0;
    Scalar gamma_d_N = 0;

    /// Builds the derived averages from the three primary rates.
    static CollectiveRates from_primary(Scalar g22, Scalar g33) {
        CollectiveRates r;
        r.gamma22_N = g22;
        r.gamma33_N = g33;
        r.gamma23_N = std::sqrt(g22 * g33);
        r.gamma_avg_N = (g22 + g33) / Scalar(2);
        r.gamma_d_N = (g33 - g22) / Scalar(2);
        return r;
    }
};

/// Classical drive on the |1> <-> |2>, |3> transitions and its switch-off ramp.
///
/// Detunings follow the sign convention of the Bloch equations used here,
/// Delta_j = omega_D - omega_j1, under which the |3><2| coherence rotates at
/// +omega23. A drive resonant on |1> <-> |2> therefore has Delta_2 = 0 and
/// Delta_3 = +omega23.
template <typename Scalar = double>
struct DriveConfig {
    Scalar rabi2 = 0;       ///< rad/ns
    Scalar rabi3 = 0;       ///< rad/ns
    Scalar detuning2 = 0;   ///< rad/ns
    Scalar detuning3 = 0;   ///< rad/ns
    Scalar ramp_t0 = -4;    ///< ns
    Scalar ramp_tau = 3.5;  ///< ns
    Scalar pulse_on = 200;  ///< ns
    Scalar pulse_off = 800; ///< ns
    /// Rabi frequency follows cos^ramp_exponent during the switch-off, i.e.
    /// the square root of the cos^4 intensity profile by default.
    Scalar ramp_exponent = 2;
};

namespace detail {
template <typename Scalar>
void require(bool ok, const char* what, Scalar value) {
    if (!ok) {
        throw ValidationError(fmt::format("{} (got {})", what, static_cast<double>(value)));
    }
}
} // namespace detail

template <typename Scalar>
void validate(const SystemParams<Scalar>& sys) {
    using detail::require;
    require(std::isfinite(sys.gamma22) && sys.gamma22 > 0, "gamma22 must be finite and > 0", sys.gamma22);
    require(std::isfinite(sys.gamma33) && sys.gamma33 >= 0, "gamma33 must be finite and >= 0", sys.gamma33);
    require(std::isfinite(sys.omega23) && sys.omega23 > 0, "omega23 must be finite and > 0", sys.omega23);
    require(std::isfinite(sys.n_atoms) && sys.n_atoms >= 0, "n_atoms must be finite and >= 0", sys.n_atoms);
    require(std::isfinite(sys.f_geom) && sys.f_geom >= 0, "f_geom must be finite and >= 0", sys.f_geom);
    const Scalar excess = sys.gamma23 * sys.gamma23 - sys.gamma22 * sys.gamma33;
    require(excess <= Scalar(1e-12) * sys.gamma22 * sys.gamma22,
            "damping matrix not positive semidefinite (gamma23^2 > gamma22*gamma33)", sys.gamma23);
}

template <typename Scalar>
void validate(const DriveConfig<Scalar>& drive) {
    using detail::require;
    require(std::isfinite(drive.ramp_tau) && drive.ramp_tau > 0, "ramp_tau must be > 0", drive.ramp_tau);
    require(std::isfinite(drive.pulse_on) && drive.pulse_on > 0, "pulse_on must be > 0", drive.pulse_on);
    require(std::isfinite(drive.pulse_off) && drive.pulse_off >= 0, "pulse_off must be >= 0", drive.pulse_off);
    require(std::isfinite(drive.rabi2) && std::isfinite(drive.rabi3), "Rabi frequencies must be finite", drive.rabi2);
    require(std::isfinite(drive.detuning2) && std::isfinite(drive.detuning3), "detunings must be finite",
            drive.detuning2);
    require(std::isfinite(drive.ramp_exponent) && drive.ramp_exponent > 0, "ramp_exponent must be > 0",
            drive.ramp_exponent);
}

/// Builds validated system parameters from ordinary frequencies in MHz.
/// gamma23 is fixed to sqrt(gamma22 * gamma33) (parallel dipoles).
template <typename Scalar = double>
SystemParams<Scalar> make_system(Scalar gamma22_MHz, Scalar branching, Scalar omega23_MHz,
                                 Scalar n_atoms = 0, Scalar f_geom = 0) {
    using detail::require;
    require(std::isfinite(gamma22_MHz) && gamma22_MHz > 0, "gamma22_MHz must be finite and > 0", gamma22_MHz);
    require(std::isfinite(branching) && branching >= 0 && branching <= 1, "branching must lie in [0, 1]",
            branching);
    require(std::isfinite(omega23_MHz) && omega23_MHz > 0, "omega23_MHz must be finite and > 0", omega23_MHz);
    SystemParams<Scalar> sys;
    sys.gamma22 = mhz_to_rad_per_ns(gamma22_MHz);
    sys.gamma33 = branching * sys.gamma22;
    sys.gamma23 = std::sqrt(sys.gamma22 * sys.gamma33);
    sys.omega23 = mhz_to_rad_per_ns(omega23_MHz);
    sys.n_atoms = n_atoms;
    sys.f_geom = f_geom;
    validate(sys);
    return sys;
}

/// Paper-regime defaults: 85Rb D2 F'=4/F'=3 with the given cooperative product.
template <typename Scalar = double>
SystemParams<Scalar> rb85_system(Scalar n_atoms = 0, Scalar f_geom = 0) {
    return make_system<Scalar>(Scalar(rb85::gamma22_MHz), Scalar(rb85::branching), Scalar(rb85::omega23_MHz),
                               n_atoms, f_geom);
}

template <typename Scalar>
CollectiveRates<Scalar> collective_rates(const SystemParams<Scalar>& sys) {
    const Scalar k = sys.enhancement();
    return CollectiveRates<Scalar>::from_primary(k * sys.gamma22, k * sys.gamma33);
}

/// Collective rates for a given enhancement Gamma22^(N) / Gamma22.
template <typename Scalar>
CollectiveRates<Scalar> rates_for_enhancement(const SystemParams<Scalar>& sys, Scalar enhancement) {
    return CollectiveRates<Scalar>::from_primary(enhancement * sys.gamma22, enhancement * sys.gamma33);
}

/// True when the largest collective rate stays below omega23 / 5.
template <typename Scalar>
bool well_separated(const CollectiveRates<Scalar>& rates, Scalar omega23) {
    return rates.gamma22_N <= omega23 / Scalar(5) && rates.gamma33_N <= omega23 / Scalar(5);
}

/// Weak drive resonant on |1> <-> |2> with the given saturation parameter
/// s = I / I_sat = 8 Omega_2^2 / Gamma22^2. Omega_3 follows from the dipole
/// ratio sqrt(Gamma33 / Gamma22).
template <typename Scalar>
DriveConfig<Scalar> weak_resonant_drive(const SystemParams<Scalar>& sys, Scalar saturation) {
    detail::require(std::isfinite(saturation) && saturation >= 0, "saturation must be >= 0", saturation);
    DriveConfig<Scalar> d;
    d.rabi2 = sys.gamma22 * std::sqrt(saturation / Scalar(8));
    d.rabi3 = d.rabi2 * std::sqrt(sys.gamma33 / sys.gamma22);
    d.detuning2 = 0;
    d.detuning3 = sys.omega23;
    return d;
}

/// Single-atom-equivalent description of a driven ensemble: damping rates
/// scaled by (1 + N f) and Rabi frequencies by sqrt(N).
template <typename Scalar>
struct DrivenEnsemble {
    SystemParams<Scalar> system;
    DriveConfig<Scalar> drive;
};

template <typename Scalar>
DrivenEnsemble<Scalar> driven_ensemble(const SystemParams<Scalar>& sys, const DriveConfig<Scalar>& drive) {
    DrivenEnsemble<Scalar> out{sys, drive};
    const Scalar k = sys.enhancement();
    out.system.gamma22 *= k;
    out.system.gamma33 *= k;
    out.system.gamma23 = std::sqrt(out.system.gamma22 * out.system.gamma33);
    out.system.n_atoms = 0;
    out.system.f_geom = 0;
    const Scalar amp = std::sqrt(std::max(sys.n_atoms, Scalar(1)));
    out.drive.rabi2 *= amp;
    out.drive.rabi3 *= amp;
    return out;
}

} // namespace qbeat
