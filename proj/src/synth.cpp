#include "qbeat/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "qbeat/errors.hpp"

namespace qbeat {

namespace {

std::size_t bins_for(double span, double width) {
    return static_cast<std::size_t>(std::llround(span / width));
}

} // namespace

void validate(const ExperimentConfig& cfg) {
    for (const double od : cfg.od_list) {
        if (!(od > 0 && od < 10)) {
            throw ValidationError(fmt::format("od_list entry {} outside (0, 10)", od));
        }
    }
    if (!(cfg.duration >= 100)) {
        throw ValidationError(fmt::format("duration must be >= 100 ns (got {})", cfg.duration));
    }
    if (!(cfg.bin_width > 0)) {
        throw ValidationError(fmt::format("bin_width must be > 0 (got {})", cfg.bin_width));
    }
    if (!(cfg.pre_duration >= cfg.bin_width)) {
        throw ValidationError(fmt::format("pre_duration must cover at least one bin (got {})", cfg.pre_duration));
    }
    if (!(cfg.counts_budget > 0) || !std::isfinite(cfg.counts_budget)) {
        throw ValidationError(fmt::format("counts_budget must be finite and > 0 (got {})", cfg.counts_budget));
    }
    if (!(cfg.flash_scale > 0) || !std::isfinite(cfg.flash_scale)) {
        throw ValidationError(fmt::format("flash_scale must be finite and > 0 (got {})", cfg.flash_scale));
    }
    if (!std::isfinite(cfg.slope) || !std::isfinite(cfg.intercept)) {
        throw ValidationError("enhancement law coefficients must be finite");
    }
    if (cfg.signal_model == IntensityModel::exact) {
        throw ValidationError("signal_model must be two-term or three-term");
    }
}

double od_to_enhancement(double od, double slope, double intercept) {
    if (!(od > 0)) {
        throw ValidationError(fmt::format("od must be > 0 (got {})", od));
    }
    const double e = slope * od + intercept;
    if (!(e >= 1)) {
        throw ValidationError(
            fmt::format("enhancement {} < 1 at od = {}: collective rate below the single-atom rate", e, od));
    }
    return e;
}

double steady_transmission(double od) {
    if (!(od >= 0)) {
        throw ValidationError(fmt::format("od must be >= 0 (got {})", od));
    }
    return std::exp(-od);
}

std::mt19937_64 make_generator(std::uint64_t seed, double od) {
    const auto bits = std::bit_cast<std::uint64_t>(od);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(bits), static_cast<std::uint32_t>(bits >> 32)};
    return std::mt19937_64(seq);
}

Histogram expected_histogram(const ExperimentConfig& cfg, const SystemParams<double>& sys, double od) {
    validate(cfg);
    const double enhancement = od_to_enhancement(od, cfg.slope, cfg.intercept);
    const auto rates = rates_for_enhancement(sys, enhancement);
    const double transmission = steady_transmission(od);
    const double flash = cfg.flash_scale * od;

    const std::size_t n_pre = bins_for(cfg.pre_duration, cfg.bin_width);
    const std::size_t n_post = bins_for(cfg.duration, cfg.bin_width);

    Histogram h;
    h.bin_width = cfg.bin_width;
    h.t_start = -static_cast<double>(n_pre) * cfg.bin_width;
    h.steady_counts = cfg.counts_budget;
    h.od = od;
    h.n_pulses = cfg.n_pulses;
    h.counts.resize(n_pre + n_post);

    // Flash transient: linear rise from T_s at t = -0.5 ns to the flash peak at t = 0.
    constexpr double rise = 0.5;
    const double peak = flash * intensity_model(0.0, rates, sys.omega23, cfg.signal_model);
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double t = h.time(k);
        double level = transmission;
        if (k >= n_pre) {
            level = flash * intensity_model(t, rates, sys.omega23, cfg.signal_model);
        } else if (t > -rise) {
            level = transmission + (peak - transmission) * (t + rise) / rise;
        }
        // The two-term form dips below zero in the far tail; a rate cannot.
        const double mean = cfg.counts_budget * std::max(level, 0.0);
        if (!(mean <= 2147483648.0)) {
            throw ValidationError(fmt::format("expected counts {} per bin overflow the 2^31 limit", mean));
        }
        h.counts[k] = mean;
    }
    return h;
}

Histogram synth_histogram(const ExperimentConfig& cfg, const SystemParams<double>& sys, double od,
                          std::uint64_t seed) {
    Histogram h = expected_histogram(cfg, sys, od);
    h.seed = seed;
    if (cfg.noiseless) {
        return h;
    }
    auto gen = make_generator(seed, od);
    for (double& c : h.counts) {
        if (c > 0) {
            std::poisson_distribution<long long> draw(c);
            c = static_cast<double>(draw(gen));
        } else {
            c = 0;
        }
    }
    return h;
}

} // namespace qbeat
