// qdsps command-line driver.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <tbb/global_control.h>

#include "qdsps/scenario.hpp"

using namespace qdsps;
namespace sc = qdsps::scenario;

namespace {

enum Exit { Ok = 0, ConfigFail = 1, EngineFail = 2, CheckFail = 3 };

// A config argument is a file path or "preset:<name>".
sc::ScenarioConfig load(const std::string& arg) {
    const std::string tag = "preset:";
    if (arg.rfind(tag, 0) == 0) return sc::parse_config(sc::preset_text(arg.substr(tag.size())));
    return sc::load_config(arg);
}

void print_record(const sc::RunRecord& r) {
    if (!r.ok()) {
        fmt::print("{}: error: {}\n", r.name, r.error);
        return;
    }
    fmt::print("{}: theta = {:.4f} pi, tau_p = {:.4g} ps, delta_l = {:.4g} ueV\n", r.name, r.theta / units::pi, r.tau_p,
               units::rad_per_ps_to_ueV(r.delta_l));
    if (r.fom)
        fmt::print("  N_a = {:.4f}  I = {:.4f}  D1 = {:.4g}  D2 = {:.4g}  F_P = {:.4g}\n", r.n_a, r.fom->indist, r.fom->d1,
                   r.fom->d2, r.fom->purcell);
    else
        fmt::print("  N_a = {:.4f}  population at center + 2 tau_p = {:.4f}  max = {:.4f}\n", r.n_a, r.probe_population,
                   r.max_population);
    for (const auto& w : r.warnings) fmt::print("  warning: {}\n", w);
    for (const auto& p : r.paths) fmt::print("  wrote {}\n", p);
    fmt::print("  wall clock {:.2f} s\n", r.wall_clock_s);
}

int check(const std::vector<sc::RunRecord>& records, const sc::CheckThresholds& c) {
    if (c.empty()) {
        fmt::print(stderr, "--check given but the config has no check section\n");
        return ConfigFail;
    }
    int status = Ok;
    for (const auto& r : records) {
        const auto fails = sc::check_record(r, c);
        for (const auto& f : fails) fmt::print("CHECK FAIL {}: {}\n", r.name, f);
        if (fails.empty()) fmt::print("CHECK PASS {}\n", r.name);
        else status = CheckFail;
    }
    return status;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pulse-excited quantum-dot cavity single-photon source simulator"};
    app.set_version_flag("--version", std::string(sc::engine_version));
    app.require_subcommand(1);

    int threads = 0;
    std::string out_dir;
    bool verbose = false, quiet = false;
    app.add_option("--threads", threads, "Maximum worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    app.add_option("-o,--out", out_dir, "Output directory (default: $QDSPS_OUTPUT_DIR or ./qdsps_out)");
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Errors only");

    std::string config_arg;
    bool check_flag = false;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("config", config_arg, "YAML config file or preset:<name>")->required();
    };

    auto* run = app.add_subcommand("run", "Run one scenario (optimises the area if the config has an optimize section)");
    add_config(run);
    run->add_flag("--check", check_flag, "Exit with status 3 if a check threshold fails");

    auto* sweep = app.add_subcommand("sweep", "Run the Cartesian product of the sweep axes");
    add_config(sweep);
    sweep->add_flag("--check", check_flag, "Exit with status 3 if a check threshold fails");

    auto* tpe = app.add_subcommand("tpe-optimize", "Maximise N_a over the pulse area for the biexciton scheme");
    add_config(tpe);
    tpe->add_flag("--check", check_flag, "Exit with status 3 if a check threshold fails");

    auto* optimize = app.add_subcommand("optimize", "Maximise N_a over the pulse area for any scheme");
    add_config(optimize);
    optimize->add_flag("--check", check_flag, "Exit with status 3 if a check threshold fails");

    auto* compare = app.add_subcommand("compare-dissipators", "Population series under each phonon dissipator");
    add_config(compare);

    auto* presets = app.add_subcommand("presets", "List or print the shipped presets");
    presets->require_subcommand(1);
    auto* plist = presets->add_subcommand("list", "Preset names");
    auto* pemit = presets->add_subcommand("emit", "Print a preset's YAML");
    std::string preset_name;
    pemit->add_option("name", preset_name)->required();

    CLI11_PARSE(app, argc, argv);

    spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::err : spdlog::level::info);
    std::unique_ptr<tbb::global_control> limit;
    if (threads > 0)
        limit = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                                      static_cast<std::size_t>(threads));

    try {
        if (*plist) {
            for (const auto& n : sc::preset_names()) fmt::print("{}\n", n);
            return Ok;
        }
        if (*pemit) {
            fmt::print("{}", sc::preset_text(preset_name));
            return Ok;
        }

        const sc::ScenarioConfig cfg = load(config_arg);
        sc::RunContext ctx;
        ctx.out_dir = sc::resolve_output_dir(out_dir.empty() ? std::nullopt : std::optional<std::string>(out_dir));
        spdlog::info("{} ({}), config hash {}", cfg.name, sc::to_string(cfg.scheme), cfg.hash().substr(0, 12));

        std::vector<sc::RunRecord> records;
        if (*run) {
            if (cfg.optimize) {
                auto res = sc::optimize_area(cfg, ctx);
                records.push_back(res.record);
            } else if (!cfg.sweep.empty()) {
                throw sc::ConfigError("config has sweep axes; use the sweep subcommand");
            } else {
                records.push_back(sc::run_scenario(cfg, ctx));
            }
        } else if (*sweep) {
            records = sc::run_sweep(cfg, ctx);
        } else if (*tpe) {
            records.push_back(sc::optimize_tpe_area(cfg, ctx).record);
        } else if (*optimize) {
            records.push_back(sc::optimize_area(cfg, ctx).record);
        } else if (*compare) {
            const auto cmp = sc::compare_dissipators(cfg, ctx);
            for (std::size_t i = 0; i < cmp.labels.size(); ++i)
                fmt::print("{:16s} max |population - weak_full| = {:.3e}\n", cmp.labels[i], cmp.max_difference[i]);
            for (const auto& p : cmp.paths) fmt::print("wrote {}\n", p);
            return Ok;
        }

        bool failed = false;
        for (const auto& r : records) {
            print_record(r);
            failed = failed || !r.ok();
        }
        if (check_flag) {
            const int status = check(records, cfg.check);
            if (status != Ok) return status;
        }
        return failed ? EngineFail : Ok;
    } catch (const sc::ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return ConfigFail;
    } catch (const std::exception& e) {
        spdlog::error("engine error: {}", e.what());
        return EngineFail;
    }
}
