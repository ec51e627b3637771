#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qbeat/analysis.hpp"
#include "qbeat/beat.hpp"
#include "qbeat/bloch.hpp"
#include "qbeat/params.hpp"
#include "qbeat/synth.hpp"

namespace qbeat::io {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// Round-trip decimal (17 significant digits) for machine files.
std::string fmt_exact(double v);
/// Four significant digits for human summaries.
std::string fmt_human(double v);

/// Physical parameters as read from a params file. Frequencies in MHz.
struct ParamsFile {
    double gamma22_MHz = rb85::gamma22_MHz;
    double branching = rb85::branching;
    double omega23_MHz = rb85::omega23_MHz;
    double n_atoms = 0;
    double f_geom = 0;
    std::optional<DriveConfig<double>> drive;  ///< rad/ns, ns

    SystemParams<double> system() const;
};

ParamsFile params_from_json(const json& j);
json to_json(const ParamsFile& p);

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig base = {});
json to_json(const ExperimentConfig& cfg);

IntensityModel parse_model(const std::string& name);

json read_json(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);
void write_json(const fs::path& path, const json& j);

/// Histogram CSV: `# key=value` metadata lines, a `t_ns,counts` header,
/// then one row per bin. Metadata keys: bin_width_ns, t_start_ns,
/// steady_counts, od, seed, n_pulses. Without metadata the grid is inferred
/// from the rows and steady_counts is left at 0 for the caller to supply.
std::string histogram_csv(const Histogram& h);
void write_histogram(const fs::path& path, const Histogram& h);
Histogram parse_histogram(const std::string& text, const std::string& origin = "<string>");
Histogram read_histogram(const fs::path& path);
/// `hist_od{value}.csv` with the OD in shortest round-trip form.
std::string histogram_filename(double od);

/// Columns t_ns, intensity_normalized (exact), intensity_model, plus the
/// approximate model's name in a comment.
std::string trace_csv(const IntensityTrace<double>& exact, const IntensityTrace<double>& model);
struct TraceTable {
    std::vector<double> t;
    std::vector<double> exact;
    std::vector<double> model;
};
TraceTable parse_trace(const std::string& text, const std::string& origin = "<string>");

std::string trajectory_csv(const BlochTrajectory<double>& traj);
std::string spectrum_csv(const Spectrum& s);
std::string summary_csv(const std::vector<BeatRow>& rows);
/// Aligned fixed-width table for terminals.
std::string summary_table(const std::vector<BeatRow>& rows);

json to_json(const FitResult& f, const SystemParams<double>& sys);
json to_json(const MetaFit& m);
json to_json(const PoleSet<double>& p, double omega23);
json to_json(const DensityMatrix3<double>& rho);

} // namespace qbeat::io
