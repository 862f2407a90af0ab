#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <tbb/global_control.h>

#include "qdsps/scenario.hpp"

using namespace qdsps;
using namespace qdsps::scenario;
namespace fs = std::filesystem;

namespace {

const char* minimal = R"(scheme: resonant
pulse:
  area: 1 pi
  tau_p: 2 ps
)";

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("qdsps_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int error_line(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    return -1;
}

} // namespace

TEST(ParseConfig, MinimalResonantFillsDefaults) {
    const auto c = parse_config(minimal);
    EXPECT_EQ(c.scheme, Scheme::Resonant);
    EXPECT_NEAR(units::rad_per_ps_to_ueV(c.g), 20.0, 1e-12);
    EXPECT_NEAR(units::rad_per_ps_to_ueV(c.kappa), 50.0, 1e-12);
    EXPECT_NEAR(units::rad_per_ps_to_ueV(c.gamma), 1.0, 1e-12);
    EXPECT_EQ(c.bath.temperature, 4.0);
    EXPECT_EQ(c.bath.alpha, 0.03);
    EXPECT_NEAR(units::rad_per_ps_to_meV(c.bath.omega_b), 0.9, 1e-12);
    EXPECT_NEAR(c.pulse.area_theta, units::pi, 1e-15);
    EXPECT_EQ(c.pulse.tau_p, 2.0);
    EXPECT_EQ(c.dissipator, models::DissipatorKind::WeakFull);
    EXPECT_NO_THROW(c.validate());
}

TEST(ParseConfig, RejectsUnitlessQuantity) {
    const std::string text = std::string(minimal) + "system:\n  g: 20\n";
    EXPECT_THROW(parse_config(text), ConfigError);
    EXPECT_EQ(error_line(text), 6);
}

TEST(ParseConfig, RejectsWrongUnitKind) {
    EXPECT_THROW(parse_config(std::string(minimal) + "system:\n  g: 20 ps\n"), ConfigError);
    EXPECT_THROW(parse_config(std::string(minimal) + "bath:\n  temperature: 4 meV\n"), ConfigError);
}

TEST(ParseConfig, TpeRequiresBindingEnergy) {
    const char* text = R"(scheme: tpe_biexciton
pulse:
  area: 4 pi
  tau_fwhm: 7.3 ps
system:
  gamma_u: 2 ueV
)";
    EXPECT_THROW(parse_config(text), ConfigError);
}

TEST(ParseConfig, SchemeMismatches) {
    EXPECT_THROW(parse_config(std::string(minimal) + "system:\n  binding_energy: 3 meV\n"), ConfigError);
    EXPECT_THROW(parse_config(std::string(minimal) + "system:\n  delta_l: 1 meV\n"), ConfigError);
    EXPECT_THROW(parse_config("scheme: phonon_assisted\npulse:\n  area: 4 pi\n  tau_p: 6 ps\n"), ConfigError);
}

TEST(ParseConfig, UnknownKeyReportsLine) {
    const std::string text = std::string(minimal) + "bath:\n  temprature: 4 K\n";
    EXPECT_THROW(parse_config(text), ConfigError);
    EXPECT_EQ(error_line(text), 6);
    EXPECT_THROW(parse_config(std::string(minimal) + "colour: blue\n"), ConfigError);
}

TEST(ParseConfig, MissingPieces) {
    EXPECT_THROW(parse_config("pulse:\n  area: 1 pi\n  tau_p: 2 ps\n"), ConfigError);
    EXPECT_THROW(parse_config("scheme: resonant\npulse:\n  tau_p: 2 ps\n"), ConfigError);
    EXPECT_THROW(parse_config("scheme: resonant\npulse:\n  area: 1 pi\n"), ConfigError);
    EXPECT_THROW(parse_config("scheme: [resonant\n"), ConfigError);
}

TEST(ParseQuantity, Units) {
    EXPECT_NEAR(parse_quantity("20 ueV", "energy"), units::ueV_to_rad_per_ps(20.0), 1e-15);
    EXPECT_NEAR(parse_quantity("20 µeV", "energy"), units::ueV_to_rad_per_ps(20.0), 1e-15);
    EXPECT_NEAR(parse_quantity("1 meV", "energy"), units::meV_to_rad_per_ps(1.0), 1e-15);
    EXPECT_NEAR(parse_quantity("0.5 rad/ps", "energy"), 0.5, 1e-15);
    EXPECT_NEAR(parse_quantity("2 ps", "time"), 2.0, 1e-15);
    EXPECT_NEAR(parse_quantity("1.5 ns", "time"), 1500.0, 1e-12);
    EXPECT_NEAR(parse_quantity("4 K", "temperature"), 4.0, 1e-15);
    EXPECT_NEAR(parse_quantity("0.03 ps^2", "coupling"), 0.03, 1e-15);
    EXPECT_NEAR(parse_quantity("18 pi", "area"), 18.0 * units::pi, 1e-12);
    EXPECT_THROW(parse_quantity("20", "energy"), ConfigError);
    EXPECT_THROW(parse_quantity("abc meV", "energy"), ConfigError);
}

TEST(ConfigHash, StableUnderFormatting) {
    const auto a = parse_config(minimal);
    const auto b = parse_config("# comment\npulse:\n  tau_p: 2000 fs\n  area: 1 pi\nscheme: resonant\n");
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(a.hash().size(), 64u);
    const auto c = parse_config(std::string(minimal) + "system:\n  g: 21 ueV\n");
    EXPECT_NE(a.hash(), c.hash());
    EXPECT_EQ(parse_config(minimal).hash(), a.hash());
}

TEST(Presets, AllParseAndValidate) {
    const auto names = preset_names();
    for (const char* want : {"fig2-resonant", "fig2-offres", "fig3-inversion-map", "fig4-pulseshape", "fig5-tpe",
                             "figA1-polaron-compare", "figB1-simplified-compare"})
        EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
    for (const auto& n : names) {
        ScenarioConfig c;
        EXPECT_NO_THROW(c = parse_config(preset_text(n))) << n;
        EXPECT_NO_THROW(c.validate()) << n;
    }
    EXPECT_THROW(preset_text("nope"), ConfigError);
}

TEST(OutputDir, Resolution) {
    ::setenv("QDSPS_OUTPUT_DIR", "/tmp/from_env", 1);
    EXPECT_EQ(resolve_output_dir(std::string("explicit")), fs::path("explicit"));
    EXPECT_EQ(resolve_output_dir(std::nullopt), fs::path("/tmp/from_env"));
    ::unsetenv("QDSPS_OUTPUT_DIR");
    EXPECT_EQ(resolve_output_dir(std::nullopt), fs::path("qdsps_out"));
}

TEST(RunScenario, EngineSmokeInversion) {
    const char* text = R"(name: smoke
scheme: resonant
pulse:
  area: 1 pi
  tau_p: 2 ps
system:
  g: 0 ueV
  gamma: 0 ueV
bath:
  alpha: 0 ps^2
dissipator: none
outputs:
  fom: false
  trajectory: false
)";
    RunContext ctx;
    ctx.write_files = false;
    const auto r = run_scenario(parse_config(text), ctx);
    ASSERT_TRUE(r.ok()) << r.error;
    EXPECT_NEAR(r.max_population, 1.0, 1e-3);
}

TEST(RunScenario, ResonantFilesAreReproducible) {
    const auto cfg = parse_config(std::string("name: repro\n") + minimal + "outputs:\n  surfaces: true\n");
    RunContext a, b;
    a.out_dir = scratch("repro_a");
    b.out_dir = scratch("repro_b");
    const auto ra = run_scenario(cfg, a);
    const auto rb = run_scenario(cfg, b);
    ASSERT_TRUE(ra.ok());
    EXPECT_GT(ra.n_a, 0.90);
    EXPECT_GT(ra.fom->indist, 0.95);
    ASSERT_EQ(ra.paths.size(), rb.paths.size());
    const std::string header = "# qdsps " + std::string(engine_version) + " config_hash=" + cfg.hash();
    int csvs = 0;
    for (std::size_t i = 0; i < ra.paths.size(); ++i) {
        const fs::path pa(ra.paths[i]), pb(rb.paths[i]);
        if (pa.extension() != ".csv") continue;
        ++csvs;
        const std::string da = slurp(pa);
        EXPECT_EQ(da, slurp(pb)) << pa.filename();
        EXPECT_EQ(da.substr(0, header.size()), header) << pa.filename();
    }
    EXPECT_GE(csvs, 6);  // trajectory, four surfaces, figures of merit
    EXPECT_TRUE(fs::exists(a.out_dir / "repro.run.json"));
}

TEST(RunSweep, OneRowPerPointInLexicographicOrder) {
    const char* text = R"(name: grid
scheme: phonon_assisted
pulse:
  tau_p: 2 ps
system:
  delta_l: 0.5 meV
sweep:
  pulse_area: [2 pi, 4 pi]
  tau_p: [2 ps, 3 ps]
  delta_l: [0.5 meV, 1 meV]
outputs:
  fom: false
  trajectory: false
)";
    RunContext ctx;
    ctx.out_dir = scratch("sweep");
    const auto recs = run_sweep(parse_config(text), ctx);
    ASSERT_EQ(recs.size(), 8u);
    std::size_t i = 0;
    for (double a : {2.0, 4.0})
        for (double tp : {2.0, 3.0})
            for (double dl : {0.5, 1.0}) {
                EXPECT_NEAR(recs[i].theta, a * units::pi, 1e-12);
                EXPECT_EQ(recs[i].tau_p, tp);
                EXPECT_NEAR(recs[i].delta_l, units::meV_to_rad_per_ps(dl), 1e-12);
                EXPECT_TRUE(recs[i].ok());
                ++i;
            }
    std::ifstream is(ctx.out_dir / "grid_sweep.csv");
    std::string line;
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#') ++rows;
    EXPECT_EQ(rows, 9);  // header plus one per point
}

TEST(RunSweep, EmptyAxesGiveSingleRun) {
    auto cfg = parse_config(std::string("name: single\n") + minimal + "outputs:\n  fom: false\n");
    RunContext ctx;
    ctx.write_files = false;
    EXPECT_EQ(run_sweep(cfg, ctx).size(), 1u);
}

TEST(RunSweep, FailedPointIsRecordedAndSweepContinues) {
    // 400 pi at dt = 0.5 ps makes RK4 blow up; 1 pi is fine.
    const char* text = R"(name: blowup
scheme: resonant
pulse:
  tau_p: 2 ps
sweep:
  pulse_area: [1 pi, 400 pi]
numerics:
  dt: 0.5 ps
  stride: 1
outputs:
  fom: false
  trajectory: false
)";
    RunContext ctx;
    ctx.write_files = false;
    const auto recs = run_sweep(parse_config(text), ctx);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_TRUE(recs[0].ok());
    EXPECT_FALSE(recs[1].ok());
}

TEST(RunSweep, ThreadCountDoesNotChangeResults) {
    const char* text = R"(name: threads
scheme: phonon_assisted
pulse:
  tau_p: 3 ps
system:
  delta_l: 0.75 meV
sweep:
  pulse_area: [4 pi, 8 pi, 12 pi]
  population_only: true
outputs:
  trajectory: false
)";
    const auto cfg = parse_config(text);
    RunContext ctx;
    ctx.write_files = false;
    const auto par = run_sweep(cfg, ctx);
    std::vector<RunRecord> one;
    {
        tbb::global_control limit(tbb::global_control::max_allowed_parallelism, 1);
        one = run_sweep(cfg, ctx);
    }
    ASSERT_EQ(par.size(), one.size());
    for (std::size_t i = 0; i < par.size(); ++i) {
        EXPECT_EQ(par[i].n_a, one[i].n_a);
        EXPECT_EQ(par[i].max_population, one[i].max_population);
    }
}

TEST(Optimize, FlatObjectiveWarns) {
    const char* text = R"(name: flat
scheme: phonon_assisted
pulse:
  tau_p: 2 ps
system:
  g: 0 ueV
  delta_l: 20 meV
optimize:
  area_min: 1 pi
  area_max: 4 pi
  coarse_points: 4
outputs:
  trajectory: false
)";
    RunContext ctx;
    ctx.write_files = false;
    const auto res = optimize_area(parse_config(text), ctx);
    bool flagged = false;
    for (const auto& w : res.record.warnings) flagged = flagged || w.find("flat objective") != std::string::npos;
    EXPECT_TRUE(flagged);
    EXPECT_TRUE(res.record.ok()) << res.record.error;
    EXPECT_FALSE(res.record.fom.has_value());
    EXPECT_EQ(res.coarse.theta.size(), 4u);
}

TEST(Optimize, TpeRequiresBiexcitonScheme) {
    auto cfg = parse_config(std::string(minimal) + "optimize:\n  coarse_points: 3\n");
    RunContext ctx;
    ctx.write_files = false;
    EXPECT_THROW(optimize_tpe_area(cfg, ctx), ConfigError);
}

TEST(CheckRecord, ReportsEveryFailedThreshold) {
    RunRecord r;
    r.n_a = 0.5;
    r.fom = correlators::FiguresOfMerit{0.5, 0.9, 0.08, 0.02, 32.0};
    CheckThresholds c;
    c.n_a_min = 0.88;
    c.indist_min = 0.94;
    c.d2_max = 0.001;
    EXPECT_EQ(check_record(r, c).size(), 3u);
    c = CheckThresholds{};
    c.n_a_max = 0.6;
    EXPECT_TRUE(check_record(r, c).empty());
}

TEST(CompareDissipators, SharedGridAndLabels) {
    const char* text = R"(name: cmp
scheme: phonon_assisted
pulse:
  area: 6 pi
  tau_p: 2 ps
system:
  delta_l: 0.5 meV
numerics:
  t_max: 30 ps
)";
    RunContext ctx;
    ctx.out_dir = scratch("compare");
    const auto cmp = compare_dissipators(parse_config(text), ctx);
    ASSERT_EQ(cmp.labels.size(), 3u);
    EXPECT_EQ(cmp.max_difference[0], 0.0);
    for (const auto& s : cmp.emitter) EXPECT_EQ(s.size(), cmp.times.size());
    EXPECT_LT(cmp.max_difference[2], 0.05);
    EXPECT_TRUE(fs::exists(ctx.out_dir / "cmp_compare.csv"));
}
