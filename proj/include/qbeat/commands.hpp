#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qbeat/analysis.hpp"
#include "qbeat/io.hpp"
#include "qbeat/synth.hpp"

namespace qbeat::cli {

inline constexpr const char* tool_version = "0.1.0";

/// Exit status of a command-line run.
enum ExitCode : int { ok = 0, validation_failure = 1, numeric_failure = 2, check_failure = 3 };

/// Everything a command can take from the command line. Unset optionals
/// fall back to the config file, then to built-in defaults.
struct Flags {
    std::optional<std::string> config;
    std::optional<std::string> params;
    std::optional<std::string> manifest;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    bool check = false;
    bool noiseless = false;

    std::optional<double> t_max;
    std::optional<double> dt;
    std::optional<std::string> model;
    std::optional<std::string> weighting;
    std::optional<std::string> hist;
    std::optional<double> window_start;
    std::optional<double> window_end;
    std::optional<int> zero_pad;
    std::optional<double> steady_counts;
    std::optional<double> od;
    std::optional<int> n_seeds;
    std::optional<unsigned> threads;
};

/// Merges defaults, the config file (or a manifest's recorded config) and
/// flags into the complete configuration of one command.
io::json resolve_config(const std::string& command, const Flags& flags);

struct RunReport {
    int exit_code = ok;
    std::vector<std::string> outputs;  ///< paths relative to the output directory
    std::string summary;               ///< human-readable, 4 significant digits
};

/// Runs a resolved command, writing its files and manifest.json into out_dir.
RunReport execute(const std::string& command, const io::json& config, const std::filesystem::path& out_dir,
                  bool check);

/// Synthesize-fit-aggregate pipeline behind `sweep` and `reproduce`.
struct PipelineConfig {
    io::ParamsFile params;
    ExperimentConfig experiment;
    std::uint64_t seed = 1;
    int n_seeds = 5;
    DecayFitOptions fit;
    int zero_pad_factor = 8;
    unsigned threads = 0;  ///< 0: hardware concurrency
};

PipelineConfig pipeline_from_json(const io::json& config);
io::json to_json(const PipelineConfig& cfg);

struct SeededFit {
    std::uint64_t seed = 0;
    OdFit od_fit;
};

struct PipelineResult {
    std::vector<SeededFit> fits;  ///< seed-major, OD order within a seed
    std::vector<BeatRow> rows;
    std::optional<MetaFit> line;
    std::optional<MetaFit> phase;
};

PipelineResult run_pipeline(const PipelineConfig& cfg, bool meta_fits);

struct CheckOutcome {
    bool pass = true;
    std::vector<std::string> lines;
};

/// Tolerances of the reproduction check against the target law
/// enhancement = 1.0 OD + 1.4 and the Ib theory line.
CheckOutcome check_reproduction(const PipelineResult& result, const SystemParams<double>& sys, bool noiseless);

} // namespace qbeat::cli
