#include "qbeat/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "qbeat/bloch.hpp"
#include "qbeat/errors.hpp"

namespace qbeat::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

const std::set<std::string> known_commands{"simulate", "synth", "fit", "fft", "sweep", "reproduce"};

constexpr double target_slope = 1.0;
constexpr double target_intercept = 1.4;

template <typename T>
T pick(const std::optional<T>& flag, const json& file, const char* key, T fallback) {
    if (flag) {
        return *flag;
    }
    if (file.contains(key)) {
        try {
            return file.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError(fmt::format("config: '{}' has the wrong type", key));
        }
    }
    return fallback;
}

void check_top_keys(const json& file, const std::set<std::string>& allowed, const std::string& command) {
    if (!file.is_object()) {
        throw ValidationError("config must be a JSON object");
    }
    for (const auto& [key, value] : file.items()) {
        if (!allowed.contains(key)) {
            throw ValidationError(fmt::format("config: unknown key '{}' for command '{}'", key, command));
        }
    }
}

// Raw params object: kept verbatim so a manifest re-run parses identical input.
json resolve_params(const Flags& flags, const json& file) {
    json raw;
    if (flags.params) {
        raw = io::read_json(*flags.params);
    } else if (file.contains("params")) {
        raw = file.at("params");
    } else {
        raw = io::to_json(io::ParamsFile{});
    }
    io::params_from_json(raw);
    return raw;
}

json resolve_experiment(const Flags& flags, const json& file) {
    ExperimentConfig cfg = file.contains("experiment") ? io::experiment_from_json(file.at("experiment"))
                                                       : ExperimentConfig{};
    if (flags.noiseless) {
        // The noiseless closed loop synthesizes with the fitting model itself.
        cfg.noiseless = true;
        cfg.signal_model = IntensityModel::two_term;
    }
    validate(cfg);
    return io::to_json(cfg);
}

Weighting parse_weighting(const std::string& name) {
    if (name == "observed") {
        return Weighting::observed;
    }
    if (name == "model") {
        return Weighting::model;
    }
    throw ValidationError(fmt::format("unknown weighting '{}' (observed, model)", name));
}

json resolve_fit(const Flags& flags, const json& file) {
    check_top_keys(file, {"window_start_ns", "window_end_ns", "model", "weighting", "zero_pad_factor"}, "fit");
    json j;
    j["window_start_ns"] = pick(flags.window_start, file, "window_start_ns", 0.0);
    j["window_end_ns"] = pick(flags.window_end, file, "window_end_ns", 120.0);
    j["model"] = pick(flags.model, file, "model", std::string("two-term"));
    j["weighting"] = pick(flags.weighting, file, "weighting", std::string("observed"));
    j["zero_pad_factor"] = pick(flags.zero_pad, file, "zero_pad_factor", 8);
    io::parse_model(j["model"].get<std::string>());
    parse_weighting(j["weighting"].get<std::string>());
    return j;
}

DecayFitOptions fit_options(const json& fit) {
    DecayFitOptions o;
    o.weighting = parse_weighting(fit.value("weighting", std::string("observed")));
    o.window.start = fit.at("window_start_ns").get<double>();
    o.window.end = fit.at("window_end_ns").get<double>();
    o.model = io::parse_model(fit.at("model").get<std::string>());
    return o;
}

struct Outputs {
    fs::path dir;
    std::vector<std::string> files;

    void text(const std::string& name, const std::string& content) {
        io::write_text(dir / name, content);
        files.push_back(name);
    }
    void json_file(const std::string& name, const json& j) {
        io::write_json(dir / name, j);
        files.push_back(name);
    }
};

RunReport run_simulate(const json& cfg, Outputs& out) {
    const auto params = io::params_from_json(cfg.at("params"));
    const auto sys = params.system();
    const double t_max = cfg.at("t_max_ns").get<double>();
    const double dt = cfg.at("dt_ns").get<double>();
    const IntensityModel model = io::parse_model(cfg.at("model").get<std::string>());
    if (model == IntensityModel::exact) {
        throw ValidationError("simulate: --model must be two-term or three-term (the exact trace is always written)");
    }
    const auto rates = collective_rates(sys);

    const auto exact = intensity_trace(t_max, dt, rates, sys.omega23, IntensityModel::exact);
    const auto approx = intensity_trace(t_max, dt, rates, sys.omega23, model);
    out.text("trace.csv", io::trace_csv(exact, approx));

    const auto exact_poles = poles(rates, sys.omega23, PoleMode::exact);
    const auto expanded_poles = poles(rates, sys.omega23, PoleMode::expanded);
    json pj;
    pj["enhancement"] = sys.enhancement();
    pj["ib"] = beat_amplitude(rates, sys.omega23);
    pj["phi"] = beat_phase(rates, sys.omega23);
    pj["well_separated"] = well_separated(rates, sys.omega23);
    pj["exact"] = io::to_json(exact_poles, sys.omega23);
    pj["expanded"] = io::to_json(expanded_poles, sys.omega23);
    out.json_file("poles.json", pj);

    RunReport report;
    report.summary = fmt::format("enhancement {}  Ib {}  phi {} rad  beat {} MHz  ({} samples)\n",
                                 io::fmt_human(sys.enhancement()), io::fmt_human(pj["ib"].get<double>()),
                                 io::fmt_human(pj["phi"].get<double>()),
                                 io::fmt_human(rad_per_ns_to_mhz(exact_poles.delta.real())), exact.times.size());
    if (expanded_poles.warning) {
        report.summary += "warning: " + *expanded_poles.warning + "\n";
    }

    if (params.drive) {
        const auto ensemble = driven_ensemble(sys, *params.drive);
        const double bloch_dt = cfg.at("bloch_dt_ns").get<double>();
        const auto rho_s = steady_state(ensemble.system, ensemble.drive);
        const auto traj = turnoff_trajectory(rho_s, ensemble.system, ensemble.drive, bloch_dt, 100);
        json sj;
        sj["steady_state"] = io::to_json(rho_s);
        sj["after_turnoff"] = io::to_json(traj.states.back());
        sj["after_turnoff_time_ns"] = traj.times.back();
        out.json_file("bloch.json", sj);
        out.text("turnoff.csv", io::trajectory_csv(traj));
        report.summary += fmt::format("steady rho22 {}  |rho21| {}  after switch-off |rho13| {}\n",
                                      io::fmt_human(rho_s(1, 1).real()), io::fmt_human(std::abs(rho_s(1, 0))),
                                      io::fmt_human(std::abs(traj.states.back()(0, 2))));
    }
    return report;
}

RunReport run_synth(const json& cfg, Outputs& out) {
    const auto sys = io::params_from_json(cfg.at("params")).system();
    const auto exp = io::experiment_from_json(cfg.at("experiment"));
    const auto seed = cfg.at("seed").get<std::uint64_t>();
    RunReport report;
    for (const double od : exp.od_list) {
        const auto h = synth_histogram(exp, sys, od, seed);
        out.text(io::histogram_filename(od), io::histogram_csv(h));
        report.summary += fmt::format("od {}: {} bins, enhancement {}\n", io::fmt_human(od), h.size(),
                                      io::fmt_human(od_to_enhancement(od, exp.slope, exp.intercept)));
    }
    if (exp.od_list.empty()) {
        report.summary = "empty od_list: no histograms written\n";
    }
    return report;
}

struct FitRun {
    Histogram hist;
    FitResult fit;
    Spectrum spectrum;
};

FitRun fit_and_transform(const json& cfg, const SystemParams<double>& sys) {
    FitRun r;
    r.hist = io::read_histogram(cfg.at("hist").get<std::string>());
    if (cfg.contains("steady_counts")) {
        r.hist.steady_counts = cfg.at("steady_counts").get<double>();
    }
    if (cfg.contains("od")) {
        r.hist.od = cfg.at("od").get<double>();
    }
    r.fit = fit_decay(r.hist, sys, fit_options(cfg.at("fit")));
    r.spectrum = subtract_and_fft(r.hist, r.fit, cfg.at("fit").at("zero_pad_factor").get<int>());
    return r;
}

json spectrum_json(const Spectrum& s) {
    json j;
    j["peak_MHz"] = s.peak_frequency();
    j["resolution_MHz"] = s.resolution_MHz;
    j["zero_pad_factor"] = s.zero_pad_factor;
    j["warning"] = s.warning ? json(*s.warning) : json(nullptr);
    return j;
}

std::string fit_summary(const FitResult& f, const SystemParams<double>& sys) {
    return fmt::format("i0 {} +- {}\nib {} +- {}\nenhancement {} +- {}\nphi {} +- {} rad\n"
                       "reduced chi2 {}  iterations {}\n",
                       io::fmt_human(f.i0), io::fmt_human(f.sigma(0)), io::fmt_human(f.ib), io::fmt_human(f.sigma(1)),
                       io::fmt_human(f.gamma22N / sys.gamma22), io::fmt_human(f.sigma(2) / sys.gamma22),
                       io::fmt_human(f.phi), io::fmt_human(f.sigma(3)), io::fmt_human(f.reduced_chi2),
                       f.n_iterations);
}

RunReport run_fit(const json& cfg, Outputs& out) {
    const auto sys = io::params_from_json(cfg.at("params")).system();
    const FitRun r = fit_and_transform(cfg, sys);
    json j = io::to_json(r.fit, sys);
    j["od"] = r.hist.od;
    j["spectrum"] = spectrum_json(r.spectrum);
    out.json_file("fit.json", j);
    out.text("spectrum.csv", io::spectrum_csv(r.spectrum));
    RunReport report;
    report.summary = fit_summary(r.fit, sys) +
                     fmt::format("spectrum peak {} MHz (resolution {} MHz)\n", io::fmt_human(r.spectrum.peak_frequency()),
                                 io::fmt_human(r.spectrum.resolution_MHz));
    return report;
}

RunReport run_fft(const json& cfg, Outputs& out) {
    const auto sys = io::params_from_json(cfg.at("params")).system();
    const FitRun r = fit_and_transform(cfg, sys);
    out.text("spectrum.csv", io::spectrum_csv(r.spectrum));
    out.json_file("spectrum.json", spectrum_json(r.spectrum));
    RunReport report;
    report.summary = fmt::format("spectrum peak {} MHz (resolution {} MHz)\n", io::fmt_human(r.spectrum.peak_frequency()),
                                 io::fmt_human(r.spectrum.resolution_MHz));
    if (r.spectrum.warning) {
        report.summary += "warning: " + *r.spectrum.warning + "\n";
    }
    return report;
}

json fits_json(const PipelineResult& result, const SystemParams<double>& sys) {
    json arr = json::array();
    for (const auto& sf : result.fits) {
        json j = io::to_json(sf.od_fit.fit, sys);
        j["od"] = sf.od_fit.od;
        j["seed"] = sf.seed;
        arr.push_back(j);
    }
    return arr;
}

RunReport run_sweep(const json& cfg, Outputs& out, bool meta, bool check) {
    const PipelineConfig pc = pipeline_from_json(cfg);
    const auto sys = pc.params.system();
    const PipelineResult result = run_pipeline(pc, meta);

    out.text("summary.csv", io::summary_csv(result.rows));
    out.text("summary.txt", io::summary_table(result.rows));
    out.json_file("fits.json", fits_json(result, sys));

    RunReport report;
    report.summary = io::summary_table(result.rows);
    if (meta) {
        out.json_file("enhancement_line.json", io::to_json(*result.line));
        out.json_file("phase_curve.json", io::to_json(*result.phase));
        report.summary += fmt::format("enhancement = ({} +- {}) OD + ({} +- {})\n", io::fmt_human(result.line->slope()),
                                      io::fmt_human(result.line->sigma(0)), io::fmt_human(result.line->intercept()),
                                      io::fmt_human(result.line->sigma(1)));
        report.summary += fmt::format("phi = atan(({} +- {}) enhancement) + ({} +- {})\n",
                                      io::fmt_human(result.phase->eta()), io::fmt_human(result.phase->sigma(0)),
                                      io::fmt_human(result.phase->phi0()), io::fmt_human(result.phase->sigma(1)));
    }
    if (check) {
        const CheckOutcome outcome = check_reproduction(result, sys, pc.experiment.noiseless);
        std::string text;
        for (const auto& line : outcome.lines) {
            text += line + "\n";
        }
        text += outcome.pass ? "CHECK PASS\n" : "CHECK FAIL\n";
        out.text("check.txt", text);
        report.summary += text;
        if (!outcome.pass) {
            report.exit_code = check_failure;
        }
    }
    return report;
}

} // namespace

io::json resolve_config(const std::string& command, const Flags& flags) {
    if (!known_commands.contains(command)) {
        throw ValidationError(fmt::format("unknown command '{}'", command));
    }
    if (flags.check && command != "reproduce") {
        throw ValidationError("--check applies to the reproduce command only");
    }
    if (flags.manifest && flags.config) {
        throw ValidationError("--manifest and --config are mutually exclusive");
    }

    json file = json::object();
    if (flags.manifest) {
        const json m = io::read_json(*flags.manifest);
        if (!m.contains("command") || !m.contains("config")) {
            throw ValidationError(fmt::format("{}: not a run manifest", *flags.manifest));
        }
        if (m.at("command").get<std::string>() != command) {
            throw ValidationError(fmt::format("{}: manifest records command '{}', not '{}'", *flags.manifest,
                                              m.at("command").get<std::string>(), command));
        }
        file = m.at("config");
    } else if (flags.config) {
        file = io::read_json(*flags.config);
    }

    json cfg;
    if (command == "simulate") {
        check_top_keys(file, {"params", "t_max_ns", "dt_ns", "model", "bloch_dt_ns"}, command);
        cfg["params"] = resolve_params(flags, file);
        cfg["t_max_ns"] = pick(flags.t_max, file, "t_max_ns", 200.0);
        cfg["dt_ns"] = pick(flags.dt, file, "dt_ns", 0.5);
        cfg["model"] = pick(flags.model, file, "model", std::string("three-term"));
        cfg["bloch_dt_ns"] = pick(std::optional<double>{}, file, "bloch_dt_ns", 1e-3);
    } else if (command == "synth") {
        check_top_keys(file, {"params", "experiment", "seed"}, command);
        cfg["params"] = resolve_params(flags, file);
        cfg["experiment"] = resolve_experiment(flags, file);
        cfg["seed"] = pick(flags.seed, file, "seed", std::uint64_t{1});
    } else if (command == "fit" || command == "fft") {
        check_top_keys(file, {"params", "hist", "fit", "steady_counts", "od"}, command);
        cfg["params"] = resolve_params(flags, file);
        const auto hist = pick(flags.hist, file, "hist", std::string());
        if (hist.empty()) {
            throw ValidationError(fmt::format("{}: a histogram file is required (--hist)", command));
        }
        cfg["hist"] = hist;
        cfg["fit"] = resolve_fit(flags, file.value("fit", json::object()));
        if (flags.steady_counts || file.contains("steady_counts")) {
            cfg["steady_counts"] = pick(flags.steady_counts, file, "steady_counts", 1.0);
        }
        if (flags.od || file.contains("od")) {
            cfg["od"] = pick(flags.od, file, "od", 0.0);
        }
    } else {
        check_top_keys(file, {"params", "experiment", "seed", "n_seeds", "fit", "threads"}, command);
        cfg["params"] = resolve_params(flags, file);
        cfg["experiment"] = resolve_experiment(flags, file);
        cfg["seed"] = pick(flags.seed, file, "seed", std::uint64_t{1});
        cfg["n_seeds"] = pick(flags.n_seeds, file, "n_seeds", 5);
        cfg["fit"] = resolve_fit(flags, file.value("fit", json::object()));
        cfg["threads"] = pick(flags.threads, file, "threads", 0u);
    }
    if (cfg.contains("fit") && cfg["fit"]["zero_pad_factor"].get<int>() < 1) {
        throw ValidationError("zero_pad_factor must be >= 1");
    }
    if (cfg.contains("n_seeds") && cfg["n_seeds"].get<int>() < 1) {
        throw ValidationError("n_seeds must be >= 1");
    }
    return cfg;
}

RunReport execute(const std::string& command, const io::json& config, const fs::path& out_dir, bool check) {
    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    Outputs out{out_dir, {}};

    RunReport report;
    if (command == "simulate") {
        report = run_simulate(config, out);
    } else if (command == "synth") {
        report = run_synth(config, out);
    } else if (command == "fit") {
        report = run_fit(config, out);
    } else if (command == "fft") {
        report = run_fft(config, out);
    } else if (command == "sweep") {
        report = run_sweep(config, out, false, false);
    } else if (command == "reproduce") {
        report = run_sweep(config, out, true, check);
    } else {
        throw ValidationError(fmt::format("unknown command '{}'", command));
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json manifest;
    manifest["command"] = command;
    manifest["tool_version"] = tool_version;
    manifest["config"] = config;
    manifest["inputs"] = config.contains("hist") ? json::array({config.at("hist")}) : json::array();
    manifest["outputs"] = out.files;
    if (config.contains("seed")) {
        json seeds = json::array();
        const int n = config.value("n_seeds", 1);
        for (int k = 0; k < n; ++k) {
            seeds.push_back(config.at("seed").get<std::uint64_t>() + static_cast<std::uint64_t>(k));
        }
        manifest["seeds"] = seeds;
    } else {
        manifest["seeds"] = json::array();
    }
    manifest["check"] = check;
    manifest["exit_code"] = report.exit_code;
    manifest["wall_clock_s"] = seconds;
    io::write_json(out_dir / "manifest.json", manifest);
    report.outputs = out.files;
    report.outputs.push_back("manifest.json");
    return report;
}

PipelineConfig pipeline_from_json(const io::json& config) {
    PipelineConfig pc;
    pc.params = io::params_from_json(config.at("params"));
    pc.experiment = io::experiment_from_json(config.at("experiment"));
    pc.seed = config.at("seed").get<std::uint64_t>();
    pc.n_seeds = config.at("n_seeds").get<int>();
    pc.fit = fit_options(config.at("fit"));
    pc.zero_pad_factor = config.at("fit").at("zero_pad_factor").get<int>();
    pc.threads = config.value("threads", 0u);
    return pc;
}

io::json to_json(const PipelineConfig& cfg) {
    json j;
    j["params"] = io::to_json(cfg.params);
    j["experiment"] = io::to_json(cfg.experiment);
    j["seed"] = cfg.seed;
    j["n_seeds"] = cfg.n_seeds;
    j["fit"] = {{"window_start_ns", cfg.fit.window.start},
                {"window_end_ns", cfg.fit.window.end},
                {"model", to_string(cfg.fit.model)},
                {"weighting", cfg.fit.weighting == Weighting::model ? "model" : "observed"},
                {"zero_pad_factor", cfg.zero_pad_factor}};
    j["threads"] = cfg.threads;
    return j;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, bool meta_fits) {
    validate(cfg.experiment);
    if (cfg.n_seeds < 1) {
        throw ValidationError("n_seeds must be >= 1");
    }
    const auto sys = cfg.params.system();
    const std::size_t n_od = cfg.experiment.od_list.size();
    const std::size_t n_tasks = n_od * static_cast<std::size_t>(cfg.n_seeds);

    PipelineResult result;
    result.fits.resize(n_tasks);
    std::vector<std::exception_ptr> errors(n_tasks);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t k = next++; k < n_tasks; k = next++) {
            const std::uint64_t seed = cfg.seed + k / n_od;
            const double od = cfg.experiment.od_list[k % n_od];
            try {
                const Histogram h = synth_histogram(cfg.experiment, sys, od, seed);
                result.fits[k] = SeededFit{seed, OdFit{od, fit_decay(h, sys, cfg.fit)}};
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    unsigned n_threads = cfg.threads > 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, std::max<std::size_t>(n_tasks, 1)));
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
    }

    // Ordered merge: the first failing task in sweep order is reported.
    for (std::size_t k = 0; k < n_tasks; ++k) {
        if (!errors[k]) {
            continue;
        }
        const std::uint64_t seed = cfg.seed + k / n_od;
        const double od = cfg.experiment.od_list[k % n_od];
        try {
            std::rethrow_exception(errors[k]);
        } catch (const NumericError& e) {
            throw NumericError(fmt::format("od {} seed {}: {}", od, seed, e.what()));
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("od {} seed {}: {}", od, seed, e.what()));
        }
    }

    std::vector<OdFit> od_fits;
    od_fits.reserve(n_tasks);
    for (const auto& sf : result.fits) {
        od_fits.push_back(sf.od_fit);
    }
    result.rows = beat_summary(od_fits, sys);

    if (meta_fits) {
        // Noiseless fits have vanishing sigmas; a relative floor keeps the weights finite.
        auto floor_sigma = [](double s, double y) { return std::max(s, 1e-12 * std::max(std::abs(y), 1.0)); };
        std::vector<MetaPoint> line_pts, phase_pts;
        for (const auto& r : result.rows) {
            line_pts.push_back({r.od, r.enhancement, floor_sigma(r.enhancement_sigma, r.enhancement)});
            phase_pts.push_back({r.enhancement, r.phi, floor_sigma(r.phi_sigma, r.phi)});
        }
        result.line = fit_enhancement_line(line_pts);
        result.phase = fit_phase_curve(phase_pts);
    }
    return result;
}

CheckOutcome check_reproduction(const PipelineResult& result, const SystemParams<double>& sys, bool noiseless) {
    if (!result.line) {
        throw ValidationError("reproduction check needs the enhancement-line fit");
    }
    CheckOutcome out;
    auto record = [&](bool ok, std::string text) {
        out.pass = out.pass && ok;
        out.lines.push_back((ok ? "ok   " : "FAIL ") + text);
    };
    const double slope = result.line->slope();
    const double intercept = result.line->intercept();
    const double slope_tol = noiseless ? 1e-3 : 0.15;
    const double intercept_tol = noiseless ? 4e-3 : 0.5;
    record(std::abs(slope - target_slope) <= slope_tol,
           fmt::format("slope {} within {} +- {}", io::fmt_human(slope), target_slope, slope_tol));
    record(std::abs(intercept - target_intercept) <= intercept_tol,
           fmt::format("intercept {} within {} +- {}", io::fmt_human(intercept), target_intercept, intercept_tol));

    const double dtheory = sys.gamma33 / sys.omega23;
    std::size_t inside = 0;
    for (const auto& r : result.rows) {
        if (noiseless) {
            inside += std::abs(r.ib - r.ib_theory) <= 5e-3 * r.ib_theory ? 1 : 0;
        } else {
            const double combined = std::hypot(r.ib_sigma, dtheory * r.enhancement_sigma);
            inside += std::abs(r.ib - r.ib_theory) <= 2 * combined ? 1 : 0;
        }
    }
    const std::size_t n = result.rows.size();
    const bool ib_ok = noiseless ? inside == n : n > 0 && static_cast<double>(inside) >= 0.9 * static_cast<double>(n);
    record(ib_ok, fmt::format("{} of {} ib points on the theory line ({})", inside, n,
                              noiseless ? "within 0.5%" : "within 2 combined sigma, need 90%"));
    return out;
}

} // namespace qbeat::cli
