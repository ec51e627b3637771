#include "qbeat/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "qbeat/errors.hpp"

namespace qbeat::io {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const char* section) {
    if (!j.is_object()) {
        throw ValidationError(fmt::format("{}: expected a JSON object", section));
    }
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw ValidationError(fmt::format("{}: unknown key '{}'", section, key));
        }
    }
}

double number(const json& j, const char* key, const char* section) {
    const auto& v = j.at(key);
    if (!v.is_number()) {
        throw ValidationError(fmt::format("{}: '{}' must be a number", section, key));
    }
    return v.get<double>();
}

void read_number(const json& j, const char* key, const char* section, double& out) {
    if (j.contains(key)) {
        out = number(j, key, section);
    }
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) {
        out.push_back(trim(cell));
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) {
        return false;
    }
    const char* first = s.data();
    if (*first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

double parse_field(const std::string& s, const std::string& origin, std::size_t line, const char* what) {
    double v = 0;
    if (!parse_double(s, v)) {
        throw ValidationError(fmt::format("{}:{}: malformed {} '{}'", origin, line, what, s));
    }
    return v;
}

} // namespace

std::string fmt_exact(double v) { return fmt::format("{:.17g}", v); }

std::string fmt_human(double v) { return fmt::format("{:.4g}", v); }

SystemParams<double> ParamsFile::system() const {
    return make_system(gamma22_MHz, branching, omega23_MHz, n_atoms, f_geom);
}

ParamsFile params_from_json(const json& j) {
    static const std::set<std::string> keys{"gamma22_MHz", "branching", "omega23_MHz", "n_atoms", "f_geom", "drive"};
    static const std::set<std::string> drive_keys{"saturation",   "rabi2_MHz",   "rabi3_MHz",   "detuning2_MHz",
                                                  "detuning3_MHz", "ramp_t0_ns", "ramp_tau_ns", "pulse_on_ns",
                                                  "pulse_off_ns",  "ramp_exponent"};
    check_keys(j, keys, "params");
    ParamsFile p;
    read_number(j, "gamma22_MHz", "params", p.gamma22_MHz);
    read_number(j, "branching", "params", p.branching);
    read_number(j, "omega23_MHz", "params", p.omega23_MHz);
    read_number(j, "n_atoms", "params", p.n_atoms);
    read_number(j, "f_geom", "params", p.f_geom);
    const auto sys = p.system();

    if (j.contains("drive")) {
        const json& d = j.at("drive");
        check_keys(d, drive_keys, "params.drive");
        double saturation = 0;
        read_number(d, "saturation", "params.drive", saturation);
        DriveConfig<double> drive = weak_resonant_drive(sys, saturation);
        auto rate = [&](const char* key, double& out) {
            if (d.contains(key)) {
                out = mhz_to_rad_per_ns(number(d, key, "params.drive"));
            }
        };
        rate("rabi2_MHz", drive.rabi2);
        rate("rabi3_MHz", drive.rabi3);
        rate("detuning2_MHz", drive.detuning2);
        rate("detuning3_MHz", drive.detuning3);
        read_number(d, "ramp_t0_ns", "params.drive", drive.ramp_t0);
        read_number(d, "ramp_tau_ns", "params.drive", drive.ramp_tau);
        read_number(d, "pulse_on_ns", "params.drive", drive.pulse_on);
        read_number(d, "pulse_off_ns", "params.drive", drive.pulse_off);
        read_number(d, "ramp_exponent", "params.drive", drive.ramp_exponent);
        validate(drive);
        p.drive = drive;
    }
    return p;
}

json to_json(const ParamsFile& p) {
    json j;
    j["gamma22_MHz"] = p.gamma22_MHz;
    j["branching"] = p.branching;
    j["omega23_MHz"] = p.omega23_MHz;
    j["n_atoms"] = p.n_atoms;
    j["f_geom"] = p.f_geom;
    if (p.drive) {
        const auto& d = *p.drive;
        j["drive"] = {{"rabi2_MHz", rad_per_ns_to_mhz(d.rabi2)},
                      {"rabi3_MHz", rad_per_ns_to_mhz(d.rabi3)},
                      {"detuning2_MHz", rad_per_ns_to_mhz(d.detuning2)},
                      {"detuning3_MHz", rad_per_ns_to_mhz(d.detuning3)},
                      {"ramp_t0_ns", d.ramp_t0},
                      {"ramp_tau_ns", d.ramp_tau},
                      {"pulse_on_ns", d.pulse_on},
                      {"pulse_off_ns", d.pulse_off},
                      {"ramp_exponent", d.ramp_exponent}};
    }
    return j;
}

IntensityModel parse_model(const std::string& name) {
    if (name == "two-term") {
        return IntensityModel::two_term;
    }
    if (name == "three-term") {
        return IntensityModel::three_term;
    }
    if (name == "exact") {
        return IntensityModel::exact;
    }
    throw ValidationError(fmt::format("unknown intensity model '{}' (two-term, three-term, exact)", name));
}

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig cfg) {
    static const std::set<std::string> keys{"od_list",     "slope",          "intercept",   "counts_budget",
                                            "duration_ns", "pre_duration_ns", "bin_width_ns", "flash_scale",
                                            "n_pulses",    "signal_model",   "noiseless"};
    check_keys(j, keys, "experiment");
    if (j.contains("od_list")) {
        const auto& list = j.at("od_list");
        if (!list.is_array()) {
            throw ValidationError("experiment: 'od_list' must be an array");
        }
        cfg.od_list.clear();
        for (const auto& v : list) {
            if (!v.is_number()) {
                throw ValidationError("experiment: 'od_list' entries must be numbers");
            }
            cfg.od_list.push_back(v.get<double>());
        }
    }
    read_number(j, "slope", "experiment", cfg.slope);
    read_number(j, "intercept", "experiment", cfg.intercept);
    read_number(j, "counts_budget", "experiment", cfg.counts_budget);
    read_number(j, "duration_ns", "experiment", cfg.duration);
    read_number(j, "pre_duration_ns", "experiment", cfg.pre_duration);
    read_number(j, "bin_width_ns", "experiment", cfg.bin_width);
    read_number(j, "flash_scale", "experiment", cfg.flash_scale);
    read_number(j, "n_pulses", "experiment", cfg.n_pulses);
    if (j.contains("signal_model")) {
        if (!j.at("signal_model").is_string()) {
            throw ValidationError("experiment: 'signal_model' must be a string");
        }
        cfg.signal_model = parse_model(j.at("signal_model").get<std::string>());
    }
    if (j.contains("noiseless")) {
        if (!j.at("noiseless").is_boolean()) {
            throw ValidationError("experiment: 'noiseless' must be true or false");
        }
        cfg.noiseless = j.at("noiseless").get<bool>();
    }
    validate(cfg);
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    json j;
    j["od_list"] = cfg.od_list;
    j["slope"] = cfg.slope;
    j["intercept"] = cfg.intercept;
    j["counts_budget"] = cfg.counts_budget;
    j["duration_ns"] = cfg.duration;
    j["pre_duration_ns"] = cfg.pre_duration;
    j["bin_width_ns"] = cfg.bin_width;
    j["flash_scale"] = cfg.flash_scale;
    j["n_pulses"] = cfg.n_pulses;
    j["signal_model"] = to_string(cfg.signal_model);
    j["noiseless"] = cfg.noiseless;
    return j;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError(fmt::format("cannot open '{}'", path.string()));
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError(fmt::format("cannot write '{}'", path.string()));
    }
    out << text;
    if (!out) {
        throw ValidationError(fmt::format("write to '{}' failed", path.string()));
    }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string histogram_csv(const Histogram& h) {
    std::string out;
    out += "# qbeat histogram\n";
    out += fmt::format("# bin_width_ns={}\n", fmt_exact(h.bin_width));
    out += fmt::format("# t_start_ns={}\n", fmt_exact(h.t_start));
    out += fmt::format("# steady_counts={}\n", fmt_exact(h.steady_counts));
    out += fmt::format("# od={}\n", fmt_exact(h.od));
    out += fmt::format("# seed={}\n", h.seed);
    out += fmt::format("# n_pulses={}\n", fmt_exact(h.n_pulses));
    out += "t_ns,counts\n";
    for (std::size_t k = 0; k < h.size(); ++k) {
        out += fmt::format("{},{}\n", fmt_exact(h.time(k)), fmt_exact(h.counts[k]));
    }
    return out;
}

void write_histogram(const fs::path& path, const Histogram& h) { write_text(path, histogram_csv(h)); }

Histogram parse_histogram(const std::string& text, const std::string& origin) {
    Histogram h;
    h.steady_counts = 0;  // unknown until read or supplied by the caller
    std::optional<double> bin_width, t_start;
    std::vector<double> times;
    bool header_seen = false;

    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                continue;
            }
            const std::string key = trim(std::string_view(line).substr(1, eq - 1));
            const std::string value = trim(std::string_view(line).substr(eq + 1));
            if (key == "seed") {
                const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), h.seed);
                if (ec != std::errc() || ptr != value.data() + value.size()) {
                    throw ValidationError(fmt::format("{}:{}: malformed seed '{}'", origin, line_no, value));
                }
            } else if (key == "bin_width_ns") {
                bin_width = parse_field(value, origin, line_no, "bin_width");
            } else if (key == "t_start_ns") {
                t_start = parse_field(value, origin, line_no, "t_start");
            } else if (key == "steady_counts") {
                h.steady_counts = parse_field(value, origin, line_no, "steady_counts");
            } else if (key == "od") {
                h.od = parse_field(value, origin, line_no, "od");
            } else if (key == "n_pulses") {
                h.n_pulses = parse_field(value, origin, line_no, "n_pulses");
            }
            continue;
        }
        if (!header_seen) {
            if (line != "t_ns,counts") {
                throw ValidationError(
                    fmt::format("{}:{}: expected header 't_ns,counts', found '{}'", origin, line_no, line));
            }
            header_seen = true;
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != 2) {
            throw ValidationError(fmt::format("{}:{}: malformed row '{}' (expected 2 fields, found {})", origin,
                                              line_no, line, cells.size()));
        }
        const double t = parse_field(cells[0], origin, line_no, "time");
        const double c = parse_field(cells[1], origin, line_no, "count");
        if (!(c >= 0) || !std::isfinite(c)) {
            throw ValidationError(fmt::format("{}:{}: count must be finite and >= 0 (got {})", origin, line_no, c));
        }
        times.push_back(t);
        h.counts.push_back(c);
    }
    if (!header_seen) {
        throw ValidationError(fmt::format("{}: missing 't_ns,counts' header", origin));
    }

    if (!bin_width) {
        if (times.size() < 2) {
            throw ValidationError(fmt::format("{}: bin_width missing and not inferable from fewer than 2 rows", origin));
        }
        bin_width = times[1] - times[0];
    }
    if (!t_start) {
        t_start = times.empty() ? 0.0 : times.front();
    }
    h.bin_width = *bin_width;
    h.t_start = *t_start;
    if (!(h.bin_width > 0)) {
        throw ValidationError(fmt::format("{}: bin_width must be > 0", origin));
    }
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (std::abs(times[k] - h.time(k)) > 1e-6 * h.bin_width) {
            throw ValidationError(fmt::format("{}: row {} at t = {} breaks the uniform grid (expected {})", origin,
                                              k + 1, times[k], h.time(k)));
        }
    }
    return h;
}

Histogram read_histogram(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(fmt::format("cannot open '{}'", path.string()));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_histogram(ss.str(), path.string());
}

std::string histogram_filename(double od) { return fmt::format("hist_od{}.csv", od); }

std::string trace_csv(const IntensityTrace<double>& exact, const IntensityTrace<double>& model) {
    if (exact.times.size() != model.times.size()) {
        throw ValidationError("trace columns differ in length");
    }
    std::string out = fmt::format("# model={}\nt_ns,intensity_normalized,intensity_model\n", to_string(model.model));
    for (std::size_t k = 0; k < exact.times.size(); ++k) {
        out += fmt::format("{},{},{}\n", fmt_exact(exact.times[k]), fmt_exact(exact.intensity[k]),
                           fmt_exact(model.intensity[k]));
    }
    return out;
}

TraceTable parse_trace(const std::string& text, const std::string& origin) {
    TraceTable t;
    bool header_seen = false;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        if (!header_seen) {
            if (line != "t_ns,intensity_normalized,intensity_model") {
                throw ValidationError(fmt::format(
                    "{}:{}: expected header 't_ns,intensity_normalized,intensity_model', found '{}'", origin, line_no,
                    line));
            }
            header_seen = true;
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != 3) {
            throw ValidationError(fmt::format("{}:{}: malformed row '{}'", origin, line_no, line));
        }
        t.t.push_back(parse_field(cells[0], origin, line_no, "time"));
        t.exact.push_back(parse_field(cells[1], origin, line_no, "intensity"));
        t.model.push_back(parse_field(cells[2], origin, line_no, "intensity"));
    }
    if (!header_seen) {
        throw ValidationError(fmt::format("{}: missing trace header", origin));
    }
    return t;
}

std::string trajectory_csv(const BlochTrajectory<double>& traj) {
    std::string out = "t_ns,rho11,rho22,rho33,re_rho21,im_rho21,re_rho31,im_rho31,re_rho23,im_rho23\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        const auto& r = traj.states[k];
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", fmt_exact(traj.times[k]), fmt_exact(r(0, 0).real()),
                           fmt_exact(r(1, 1).real()), fmt_exact(r(2, 2).real()), fmt_exact(r(1, 0).real()),
                           fmt_exact(r(1, 0).imag()), fmt_exact(r(2, 0).real()), fmt_exact(r(2, 0).imag()),
                           fmt_exact(r(1, 2).real()), fmt_exact(r(1, 2).imag()));
    }
    return out;
}

std::string spectrum_csv(const Spectrum& s) {
    std::string out;
    if (s.warning) {
        out += fmt::format("# warning: {}\n", *s.warning);
    }
    out += fmt::format("# resolution_MHz = {}\n# zero_pad_factor = {}\nfreq_MHz,magnitude\n", fmt_exact(s.resolution_MHz),
                       s.zero_pad_factor);
    for (std::size_t k = 0; k < s.freqs_MHz.size(); ++k) {
        out += fmt::format("{},{}\n", fmt_exact(s.freqs_MHz[k]), fmt_exact(s.magnitude[k]));
    }
    return out;
}

std::string summary_csv(const std::vector<BeatRow>& rows) {
    std::string out = "od,enhancement,enhancement_sigma,ib,ib_sigma,phi,phi_sigma,ib_theory\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", fmt_exact(r.od), fmt_exact(r.enhancement),
                           fmt_exact(r.enhancement_sigma), fmt_exact(r.ib), fmt_exact(r.ib_sigma), fmt_exact(r.phi),
                           fmt_exact(r.phi_sigma), fmt_exact(r.ib_theory));
    }
    return out;
}

std::string summary_table(const std::vector<BeatRow>& rows) {
    std::string out = fmt::format("{:>6} {:>18} {:>20} {:>20} {:>10}\n", "od", "enhancement", "ib", "phi [rad]",
                                  "ib_theory");
    for (const auto& r : rows) {
        out += fmt::format("{:>6} {:>18} {:>20} {:>20} {:>10}\n", fmt_human(r.od),
                           fmt_human(r.enhancement) + " +- " + fmt_human(r.enhancement_sigma),
                           fmt_human(r.ib) + " +- " + fmt_human(r.ib_sigma),
                           fmt_human(r.phi) + " +- " + fmt_human(r.phi_sigma), fmt_human(r.ib_theory));
    }
    return out;
}

namespace {

json matrix_rows(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(row);
    }
    return rows;
}

json complex_pair(std::complex<double> z) { return json::array({z.real(), z.imag()}); }

} // namespace

json to_json(const FitResult& f, const SystemParams<double>& sys) {
    json j;
    j["model"] = to_string(f.model);
    j["i0"] = f.i0;
    j["ib"] = f.ib;
    j["gamma22N_rad_per_ns"] = f.gamma22N;
    j["gamma22N_MHz"] = rad_per_ns_to_mhz(f.gamma22N);
    j["enhancement"] = f.gamma22N / sys.gamma22;
    j["phi"] = f.phi;
    j["sigma"] = {{"i0", f.sigma(0)}, {"ib", f.sigma(1)}, {"gamma22N_rad_per_ns", f.sigma(2)}, {"phi", f.sigma(3)}};
    j["enhancement_sigma"] = f.sigma(2) / sys.gamma22;
    j["covariance"] = matrix_rows(f.covariance);
    j["chi2"] = f.chi2;
    j["reduced_chi2"] = f.reduced_chi2;
    j["residual_norm"] = f.residual_norm;
    j["gradient_norm"] = f.gradient_norm;
    j["n_iterations"] = f.n_iterations;
    j["n_points"] = f.n_points;
    j["converged"] = f.converged;
    j["window_ns"] = json::array({f.window.start, f.window.end});
    return j;
}

json to_json(const MetaFit& m) {
    json j;
    const bool linear = m.model == MetaModel::linear;
    j["model"] = linear ? "linear" : "arctan";
    const char* a = linear ? "slope" : "eta";
    const char* b = linear ? "intercept" : "phi0";
    j[a] = m.params(0);
    j[b] = m.params(1);
    if (m.ci_defined) {
        j["sigma"] = {{a, m.sigma(0)}, {b, m.sigma(1)}};
    } else {
        j["sigma"] = {{a, "inf"}, {b, "inf"}};
    }
    j["covariance"] = m.ci_defined ? matrix_rows(m.covariance) : json(nullptr);
    j["chi2"] = m.chi2;
    j["dof"] = m.dof;
    j["ci_defined"] = m.ci_defined;
    j["converged"] = m.converged;
    j["n_iterations"] = m.n_iterations;
    return j;
}

json to_json(const PoleSet<double>& p, double omega23) {
    auto pole = [](std::complex<double> s) {
        return json{{"rad_per_ns", complex_pair(s)},
                    {"MHz", json::array({rad_per_ns_to_mhz(s.real()), rad_per_ns_to_mhz(s.imag())})}};
    };
    json j;
    j["mode"] = p.mode == PoleMode::exact ? "exact" : "expanded";
    j["omega23_rad_per_ns"] = omega23;
    j["delta"] = pole(p.delta);
    j["s2_plus"] = pole(p.s2_plus);
    j["s2_minus"] = pole(p.s2_minus);
    j["s3_plus"] = pole(p.s3_plus);
    j["s3_minus"] = pole(p.s3_minus);
    j["warning"] = p.warning ? json(*p.warning) : json(nullptr);
    return j;
}

json to_json(const DensityMatrix3<double>& rho) {
    json j;
    j["rho11"] = rho(0, 0).real();
    j["rho22"] = rho(1, 1).real();
    j["rho33"] = rho(2, 2).real();
    j["rho21"] = complex_pair(rho(1, 0));
    j["rho31"] = complex_pair(rho(2, 0));
    j["rho23"] = complex_pair(rho(1, 2));
    return j;
}

} // namespace qbeat::io
