#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "qbeat/commands.hpp"
#include "qbeat/io.hpp"

namespace fs = std::filesystem;
namespace io = qbeat::io;

namespace {

// Fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("qbeat_cmd_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
    const std::string cmd = fmt::format("\"{}\" {} > /dev/null 2>&1", QBEAT_CLI_PATH, args);
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::vector<std::string> listing(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

} // namespace

TEST_CASE("simulate with zero length writes a header-only trace") {
    TempDir dir("sim0");
    REQUIRE(run_cli(fmt::format("simulate --t-max 0 --out {}", dir.path.string())) == 0);
    CHECK(slurp(dir.path / "trace.csv") == "# model=three-term\nt_ns,intensity_normalized,intensity_model\n");
    CHECK(fs::exists(dir.path / "poles.json"));
    CHECK(fs::exists(dir.path / "manifest.json"));
}

TEST_CASE("simulate at N f = 4.6") {
    TempDir dir("sim46");
    write_file(dir.path / "params.json", R"({"n_atoms": 4.6, "f_geom": 1})");
    REQUIRE(run_cli(fmt::format("simulate --params {0}/params.json --out {0}", dir.path.string())) == 0);
    const auto table = io::parse_trace(slurp(dir.path / "trace.csv"));
    REQUIRE(table.t.size() == 400);
    const auto sys = qbeat::rb85_system(4.6, 1.0);
    const auto rates = qbeat::collective_rates(sys);
    for (std::size_t k = 0; k < table.t.size(); k += 37) {
        CHECK(table.exact[k] == doctest::Approx(qbeat::intensity_exact(table.t[k], rates, sys.omega23)).epsilon(1e-15));
    }
    const auto poles = io::read_json(dir.path / "poles.json");
    // 5.6 Gamma22 exceeds omega23 / 5, so the expanded set carries a warning.
    CHECK(poles.dump().find("warning") != std::string::npos);
}

TEST_CASE("synth is deterministic and names files by OD") {
    TempDir a("synth_a"), b("synth_b");
    write_file(a.path / "cfg.json", R"({"experiment": {"od_list": [0.9, 2.1, 4.2]}, "seed": 7})");
    REQUIRE(run_cli(fmt::format("synth --config {0}/cfg.json --out {0}/run", a.path.string())) == 0);
    REQUIRE(run_cli(fmt::format("synth --config {0}/cfg.json --out {1}/run", a.path.string(), b.path.string())) == 0);
    const std::vector<std::string> expected{"hist_od0.9.csv", "hist_od2.1.csv", "hist_od4.2.csv", "manifest.json"};
    CHECK(listing(a.path / "run") == expected);
    for (const auto& name : {"hist_od0.9.csv", "hist_od2.1.csv", "hist_od4.2.csv"}) {
        CHECK(slurp(a.path / "run" / name) == slurp(b.path / "run" / name));
    }
}

TEST_CASE("synth with an empty OD list writes only the manifest") {
    TempDir dir("synth_empty");
    write_file(dir.path / "cfg.json", R"({"experiment": {"od_list": []}})");
    REQUIRE(run_cli(fmt::format("synth --config {0}/cfg.json --out {0}/run", dir.path.string())) == 0);
    CHECK(listing(dir.path / "run") == std::vector<std::string>{"manifest.json"});
}

TEST_CASE("fit recovers the enhancement from a synthetic file") {
    TempDir dir("fit");
    write_file(dir.path / "cfg.json", R"({"experiment": {"od_list": [4.2]}})");
    REQUIRE(run_cli(fmt::format("synth --config {0}/cfg.json --out {0}", dir.path.string())) == 0);
    REQUIRE(run_cli(fmt::format("fit --hist {0}/hist_od4.2.csv --out {0}/fit", dir.path.string())) == 0);
    const auto fit = io::read_json(dir.path / "fit" / "fit.json");
    CHECK(fit.at("enhancement").get<double>() == doctest::Approx(5.6).epsilon(0.05));
    CHECK(fs::exists(dir.path / "fit" / "spectrum.csv"));

    CHECK(run_cli(fmt::format("fit --hist {0}/hist_od4.2.csv --window-end 900 --out {0}/bad", dir.path.string())) ==
          qbeat::cli::validation_failure);
}

TEST_CASE("fit reports malformed rows and missing files as validation failures") {
    TempDir dir("fit_bad");
    write_file(dir.path / "bad.csv", "t_ns,counts\n0,5\n0.5,x\n");
    CHECK(run_cli(fmt::format("fit --hist {0}/bad.csv --steady-counts 10 --out {0}", dir.path.string())) ==
          qbeat::cli::validation_failure);
    CHECK(run_cli(fmt::format("fit --hist {0}/none.csv --out {0}", dir.path.string())) ==
          qbeat::cli::validation_failure);
    CHECK(run_cli(fmt::format("synth --config {0}/none.json --out {0}", dir.path.string())) ==
          qbeat::cli::validation_failure);
    CHECK(run_cli(fmt::format("synth --check --out {0}", dir.path.string())) == qbeat::cli::validation_failure);
}

TEST_CASE("reproduce re-run from its manifest is byte-identical") {
    TempDir dir("manifest");
    write_file(dir.path / "cfg.json", R"({"experiment": {"od_list": [1.0, 2.5, 4.0]}, "n_seeds": 2, "seed": 3})");
    REQUIRE(run_cli(fmt::format("reproduce --config {0}/cfg.json --out {0}/a", dir.path.string())) == 0);
    REQUIRE(run_cli(fmt::format("reproduce --manifest {0}/a/manifest.json --out {0}/b", dir.path.string())) == 0);
    for (const auto& name : {"summary.csv", "summary.txt", "fits.json", "enhancement_line.json", "phase_curve.json"}) {
        CAPTURE(name);
        REQUIRE(fs::exists(dir.path / "a" / name));
        CHECK(slurp(dir.path / "a" / name) == slurp(dir.path / "b" / name));
    }
    const auto ma = io::read_json(dir.path / "a" / "manifest.json");
    const auto mb = io::read_json(dir.path / "b" / "manifest.json");
    CHECK(ma.at("config") == mb.at("config"));
    CHECK(ma.at("tool_version") == qbeat::cli::tool_version);
    CHECK(ma.at("exit_code") == 0);
}

TEST_CASE("pipeline summary is deterministic across thread counts") {
    qbeat::cli::PipelineConfig cfg;
    cfg.experiment.od_list = {0.5, 2.0, 4.5};
    cfg.n_seeds = 2;
    cfg.threads = 1;
    const auto serial = qbeat::cli::run_pipeline(cfg, true);
    cfg.threads = 4;
    const auto parallel = qbeat::cli::run_pipeline(cfg, true);
    CHECK(io::summary_csv(serial.rows) == io::summary_csv(parallel.rows));
    REQUIRE(serial.line.has_value());
    CHECK(io::to_json(*serial.line) == io::to_json(*parallel.line));
}

TEST_CASE("reproduce check passes and a sabotaged law fails") {
    TempDir dir("check");
    CHECK(run_cli(fmt::format("reproduce --noiseless --check --out {0}/clean", dir.path.string())) == 0);
    write_file(dir.path / "cfg.json", R"({"experiment": {"intercept": 3.0}, "n_seeds": 1})");
    CHECK(run_cli(fmt::format("reproduce --check --config {0}/cfg.json --out {0}/bad", dir.path.string())) ==
          qbeat::cli::check_failure);
    CHECK(fs::exists(dir.path / "bad" / "check.txt"));
}

TEST_CASE("flags override the config file") {
    qbeat::cli::Flags flags;
    TempDir dir("precedence");
    write_file(dir.path / "cfg.json", R"({"seed": 5, "n_seeds": 3})");
    flags.config = (dir.path / "cfg.json").string();
    flags.seed = 9;
    const auto cfg = qbeat::cli::resolve_config("sweep", flags);
    CHECK(cfg.at("seed") == 9);
    CHECK(cfg.at("n_seeds") == 3);
    CHECK(cfg.at("threads") == 0);

    write_file(dir.path / "typo.json", R"({"seeds": 5})");
    flags.config = (dir.path / "typo.json").string();
    CHECK_THROWS_AS(qbeat::cli::resolve_config("sweep", flags), qbeat::ValidationError);
}
