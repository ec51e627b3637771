#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "qbeat/commands.hpp"
#include "qbeat/errors.hpp"

namespace {

void add_globals(CLI::App* sub, qbeat::cli::Flags& f) {
    sub->add_option("--config", f.config, "Configuration JSON");
    sub->add_option("--params", f.params, "Physical parameters JSON (overrides the config's params)");
    sub->add_option("--manifest", f.manifest, "Re-run with the configuration recorded in a manifest");
    sub->add_option("--seed", f.seed, "Base noise seed");
    sub->add_option("--out", f.out, "Output directory")->capture_default_str();
    sub->add_flag("--check", f.check, "Exit with status 3 unless the reproduction tolerances hold");
    sub->add_flag("--noiseless", f.noiseless, "Store expected counts instead of Poisson draws");
}

void add_fit_flags(CLI::App* sub, qbeat::cli::Flags& f) {
    sub->add_option("--hist", f.hist, "Histogram CSV");
    sub->add_option("--window-start", f.window_start, "Fit window start [ns]");
    sub->add_option("--window-end", f.window_end, "Fit window end [ns]");
    sub->add_option("--model", f.model, "Fit model: two-term or three-term");
    sub->add_option("--weighting", f.weighting, "Error bars: observed or model counts");
    sub->add_option("--pad", f.zero_pad, "FFT zero-padding factor");
    sub->add_option("--steady-counts", f.steady_counts, "Override the histogram's steady-state counts per bin");
    sub->add_option("--od", f.od, "Override the histogram's optical depth");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collective quantum beats: simulation, synthetic histograms and fitting"};
    app.require_subcommand(1);
    qbeat::cli::Flags flags;

    auto* simulate = app.add_subcommand("simulate", "Exact and approximate intensity traces plus poles");
    add_globals(simulate, flags);
    simulate->add_option("--t-max", flags.t_max, "Trace length [ns]");
    simulate->add_option("--dt", flags.dt, "Trace step [ns]");
    simulate->add_option("--model", flags.model, "Approximate model: two-term or three-term");

    auto* synth = app.add_subcommand("synth", "Synthetic photon histograms, one per OD");
    add_globals(synth, flags);

    auto* fit = app.add_subcommand("fit", "Fit one histogram and transform the residual");
    add_globals(fit, flags);
    add_fit_flags(fit, flags);

    auto* fft = app.add_subcommand("fft", "Decay-subtracted spectrum of one histogram");
    add_globals(fft, flags);
    add_fit_flags(fft, flags);

    for (const char* name : {"sweep", "reproduce"}) {
        auto* sub = app.add_subcommand(name, std::string(name) == "sweep"
                                                 ? "Synthesize and fit every OD and seed"
                                                 : "Sweep plus enhancement-line and phase-curve fits");
        add_globals(sub, flags);
        sub->add_option("--n-seeds", flags.n_seeds, "Number of consecutive seeds");
        sub->add_option("--threads", flags.threads, "Worker threads (0: all cores)");
        sub->add_option("--window-start", flags.window_start, "Fit window start [ns]");
        sub->add_option("--window-end", flags.window_end, "Fit window end [ns]");
        sub->add_option("--model", flags.model, "Fit model: two-term or three-term");
        sub->add_option("--weighting", flags.weighting, "Error bars: observed or model counts");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        const auto config = qbeat::cli::resolve_config(command, flags);
        const auto report = qbeat::cli::execute(command, config, flags.out, flags.check);
        std::fputs(report.summary.c_str(), stdout);
        return report.exit_code;
    } catch (const qbeat::NumericError& e) {
        fmt::print(stderr, "numeric failure: {}\n", e.what());
        return qbeat::cli::numeric_failure;
    } catch (const qbeat::ValidationError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return qbeat::cli::validation_failure;
    } catch (const std::filesystem::filesystem_error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return qbeat::cli::validation_failure;
    }
}
