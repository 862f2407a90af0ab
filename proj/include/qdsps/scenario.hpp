#pragma once

// Scenario configuration, runs, sweeps, pulse-area optimisation and result
// files. Configs are YAML; every physical quantity carries a unit.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdsps/correlators.hpp"

namespace qdsps::scenario {

inline constexpr const char* engine_version = "0.3.0";

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

enum class Scheme { Resonant, PhononAssisted, TpeBiexciton };
std::string to_string(Scheme s);

struct Numerics {
    double dt{0.01};                // ps
    int stride{10};
    std::optional<double> t_max;    // ps
    double threshold{1e-6};
    int outer_points{400};
    int group_size{16};
};

struct SweepAxes {
    std::vector<double> pulse_area;  // rad
    std::vector<double> tau_p;       // ps
    std::vector<double> delta_l;     // rad/ps
    // Skip the correlation surfaces and stop at the population probe time.
    bool population_only{false};

    bool empty() const { return pulse_area.empty() && tau_p.empty() && delta_l.empty(); }
};

struct Outputs {
    bool trajectory{true};
    bool surfaces{false};
    bool fom{true};
};

struct OptimizeSettings {
    double area_min{units::pi};
    double area_max{30.0 * units::pi};
    int coarse_points{12};
    double tolerance{0.05 * units::pi};
};

// Thresholds for --check; unset entries are not checked.
struct CheckThresholds {
    std::optional<double> n_a_min, n_a_max, indist_min, d1_max, d2_max;
    bool empty() const { return !n_a_min && !n_a_max && !indist_min && !d1_max && !d2_max; }
};

struct ScenarioConfig {
    std::string name{"scenario"};
    Scheme scheme{Scheme::Resonant};

    double g{units::ueV_to_rad_per_ps(20.0)};
    double kappa{units::ueV_to_rad_per_ps(50.0)};
    double gamma{units::ueV_to_rad_per_ps(1.0)};
    double delta_l{0.0};
    double binding_energy{units::meV_to_rad_per_ps(3.0)};
    double gamma_u{units::ueV_to_rad_per_ps(2.0)};
    int n_max{2};
    bool compensate_polaron_shift{true};

    models::PulseParams pulse{};
    phonon::PhononParams bath{};
    models::DissipatorKind dissipator{models::DissipatorKind::WeakFull};
    models::DissipatorOptions dissipator_options{};

    Numerics numerics{};
    SweepAxes sweep{};
    Outputs outputs{};
    std::optional<OptimizeSettings> optimize;
    CheckThresholds check{};

    // Throws ConfigError.
    void validate() const;
    models::SystemModel build_model() const;
    // Sorted-key JSON of every resolved field in internal units.
    std::string canonical() const;
    // SHA-256 of canonical(), hex.
    std::string hash() const;
};

// Throws ConfigError with the offending line.
ScenarioConfig parse_config(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);

// "<number> <unit>" to internal units. kind: energy, time, temperature,
// coupling (ps^2), area. Throws ConfigError on a missing or wrong unit.
double parse_quantity(const std::string& text, const std::string& kind, int line = 0);

struct RunRecord {
    std::string name;
    std::string config_hash;
    std::string engine_version{scenario::engine_version};
    double theta{0.0};                   // rad
    double tau_p{0.0};                   // ps
    double delta_l{0.0};                 // rad/ps
    std::optional<correlators::FiguresOfMerit> fom;  // absent for population-only runs
    double n_a{0.0};
    // Driven level population (x, or u for the biexciton) at center + 2 tau_p,
    // and its maximum over the run.
    double probe_population{0.0};
    double max_population{0.0};
    double max_trace_error{0.0};
    double max_hermiticity_error{0.0};
    std::vector<std::string> paths;
    double wall_clock_s{0.0};
    std::vector<std::string> warnings;
    std::string error;                   // empty on success
    bool ok() const { return error.empty(); }
};

struct RunContext {
    std::filesystem::path out_dir{"."};
    bool write_files{true};
};

// Output directory: explicit value, else QDSPS_OUTPUT_DIR, else "qdsps_out".
std::filesystem::path resolve_output_dir(const std::optional<std::string>& explicit_dir);

// One point: evolve, surfaces and figures of merit, files. Engine errors are
// rethrown as EngineError.
RunRecord run_scenario(const ScenarioConfig& cfg, const RunContext& ctx);

// Cartesian product of the axes in the order pulse_area, tau_p, delta_l,
// last axis fastest. Failed points keep their error and the sweep goes on.
std::vector<RunRecord> run_sweep(const ScenarioConfig& cfg, const RunContext& ctx);

struct AreaScan {
    std::vector<double> theta;
    std::vector<double> n_a;
};

struct OptimizeResult {
    double theta_opt{0.0};
    AreaScan coarse;
    int evaluations{0};
    RunRecord record;
};

// Maximises N_a over the pulse area with population-only runs: coarse grid,
// golden section between the neighbours of the three best coarse local maxima,
// then a full run at the best refined area.
OptimizeResult optimize_area(const ScenarioConfig& cfg, const RunContext& ctx);
// Same, restricted to the biexciton scheme.
OptimizeResult optimize_tpe_area(const ScenarioConfig& cfg, const RunContext& ctx);

struct DissipatorComparison {
    std::vector<double> times;
    std::vector<std::string> labels;             // dissipator names
    std::vector<std::vector<double>> emitter;     // x (or u) population per label
    std::vector<std::vector<double>> n_cav;
    std::vector<double> max_difference;           // vs the first label
    std::vector<std::string> paths;
};
// WeakFull, Polaron and (two-level only) WeakSimplified on the same grid.
DissipatorComparison compare_dissipators(const ScenarioConfig& cfg, const RunContext& ctx);

// Failed thresholds as messages; empty when everything passes.
std::vector<std::string> check_record(const RunRecord& r, const CheckThresholds& c);

std::vector<std::string> preset_names();
// YAML text of a shipped preset; throws ConfigError for an unknown name.
std::string preset_text(const std::string& name);

} // namespace qdsps::scenario
