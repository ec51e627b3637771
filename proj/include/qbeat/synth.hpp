#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qbeat/beat.hpp"
#include "qbeat/params.hpp"

namespace qbeat {

/// Time-binned forward photon counts. Bin k sits at t_start + k * bin_width;
/// t = 0 is the flash peak where the free decay begins.
struct Histogram {
    double bin_width = 0.5;
    double t_start = 0;
    std::vector<double> counts;
    double steady_counts = 1;  ///< expected counts per bin while the drive is on, before absorption
    double od = 0;
    std::uint64_t seed = 0;
    double n_pulses = 0;

    std::size_t size() const { return counts.size(); }
    double time(std::size_t k) const { return t_start + static_cast<double>(k) * bin_width; }
};

struct ExperimentConfig {
    std::vector<double> od_list{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5};
    double slope = 1.0;            ///< Gamma22^(N)/Gamma22 per unit OD
    double intercept = 1.4;
    double counts_budget = 1e4;    ///< steady-state counts per bin
    double duration = 120;         ///< ns of recorded decay after the flash
    double pre_duration = 20;      ///< ns of driven steady state before the flash
    double bin_width = 0.5;        ///< ns
    double flash_scale = 0.2;      ///< flash peak / steady intensity per unit OD
    double n_pulses = 2e8;
    IntensityModel signal_model = IntensityModel::three_term;
    bool noiseless = false;        ///< store expectations instead of Poisson draws
};

void validate(const ExperimentConfig& cfg);

/// Linear enhancement law slope * od + intercept; must stay >= 1.
double od_to_enhancement(double od, double slope, double intercept);

/// Steady-state transmission e^{-od}.
double steady_transmission(double od);

/// Generator for one (seed, od) task; independent of scheduling order.
std::mt19937_64 make_generator(std::uint64_t seed, double od);

/// Expected counts per bin (no noise) for a given optical depth.
Histogram expected_histogram(const ExperimentConfig& cfg, const SystemParams<double>& sys, double od);

/// Expected counts with independent Poisson noise per bin (or the
/// expectation itself when cfg.noiseless).
Histogram synth_histogram(const ExperimentConfig& cfg, const SystemParams<double>& sys, double od,
                          std::uint64_t seed);

} // namespace qbeat
