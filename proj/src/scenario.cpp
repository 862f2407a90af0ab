#include "qdsps/scenario.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>
#include <tbb/parallel_for.h>
#include <yaml-cpp/yaml.h>

namespace qdsps::scenario {

using models::DissipatorKind;
using json = nlohmann::json;

std::string to_string(Scheme s) {
    switch (s) {
    case Scheme::Resonant: return "resonant";
    case Scheme::PhononAssisted: return "phonon_assisted";
    case Scheme::TpeBiexciton: return "tpe_biexciton";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Quantities

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// Splits "<number><space?><unit>"; unit may be empty.
bool split_number(const std::string& text, double& value, std::string& unit) {
    const std::string t = trim(text);
    if (t.empty()) return false;
    const char* begin = t.data();
    const char* end = t.data() + t.size();
    if (*begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc()) return false;
    unit = trim(std::string(ptr, end));
    return true;
}

const std::map<std::string, std::map<std::string, double>>& unit_table() {
    static const std::map<std::string, std::map<std::string, double>> table = {
        {"energy",
         {{"meV", units::meV_to_rad_per_ps(1.0)},
          {"ueV", units::ueV_to_rad_per_ps(1.0)},
          {"\xC2\xB5" "eV", units::ueV_to_rad_per_ps(1.0)},
          {"\xCE\xBC" "eV", units::ueV_to_rad_per_ps(1.0)},
          {"eV", units::meV_to_rad_per_ps(1e3)},
          {"rad/ps", 1.0}}},
        {"time", {{"fs", 1e-3}, {"ps", 1.0}, {"ns", 1e3}}},
        {"temperature", {{"K", 1.0}, {"mK", 1e-3}}},
        {"coupling", {{"ps^2", 1.0}, {"ps2", 1.0}}},
        {"area", {{"pi", units::pi}, {"rad", 1.0}}},
    };
    return table;
}

} // namespace

double parse_quantity(const std::string& text, const std::string& kind, int line) {
    const auto& table = unit_table();
    const auto kt = table.find(kind);
    if (kt == table.end()) throw std::invalid_argument("parse_quantity: unknown kind " + kind);
    double value = 0.0;
    std::string unit;
    if (!split_number(text, value, unit)) throw ConfigError("cannot read a number from '" + text + "'", line);
    if (unit.empty()) throw ConfigError("missing unit in '" + text + "' (" + kind + ")", line);
    const auto ut = kt->second.find(unit);
    if (ut == kt->second.end()) {
        std::string allowed;
        for (const auto& [u, f] : kt->second) allowed += (allowed.empty() ? "" : ", ") + u;
        throw ConfigError("unit '" + unit + "' is not a " + kind + " unit (allowed: " + allowed + ")", line);
    }
    if (!std::isfinite(value)) throw ConfigError("non-finite value '" + text + "'", line);
    return value * ut->second;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

int line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

std::string scalar(const YAML::Node& n, const std::string& key) {
    if (!n.IsScalar()) throw ConfigError("'" + key + "' must be a scalar", line_of(n));
    return n.Scalar();
}

double quantity(const YAML::Node& n, const std::string& key, const std::string& kind) {
    return parse_quantity(scalar(n, key), kind, line_of(n));
}

double plain_double(const YAML::Node& n, const std::string& key) {
    double v = 0.0;
    std::string unit;
    if (!split_number(scalar(n, key), v, unit) || !unit.empty())
        throw ConfigError("'" + key + "' must be a plain number", line_of(n));
    return v;
}

int plain_int(const YAML::Node& n, const std::string& key) {
    const double v = plain_double(n, key);
    if (v != std::floor(v) || std::abs(v) > 1e9) throw ConfigError("'" + key + "' must be an integer", line_of(n));
    return static_cast<int>(v);
}

bool plain_bool(const YAML::Node& n, const std::string& key) {
    const std::string s = scalar(n, key);
    if (s == "true" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "no" || s == "off") return false;
    throw ConfigError("'" + key + "' must be true or false", line_of(n));
}

std::vector<double> quantity_list(const YAML::Node& n, const std::string& key, const std::string& kind) {
    if (!n.IsSequence()) throw ConfigError("'" + key + "' must be a list", line_of(n));
    std::vector<double> out;
    for (const auto& item : n) out.push_back(quantity(item, key, kind));
    return out;
}

// Calls handler(key, value) for every entry; unknown keys are errors.
template <typename Handler>
void for_each_key(const YAML::Node& map, const std::string& section, const std::set<std::string>& allowed,
                  Handler&& handler) {
    if (!map.IsMap()) throw ConfigError("'" + section + "' must be a mapping", line_of(map));
    for (const auto& kv : map) {
        const std::string key = kv.first.as<std::string>();
        if (!allowed.count(key)) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            throw ConfigError("unknown key '" + key + "' in " + section + " (expected one of: " + list + ")",
                              line_of(kv.first));
        }
        handler(key, kv.second);
    }
}

} // namespace

ScenarioConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("YAML syntax error: " + e.msg, e.mark.line + 1);
    }
    if (!root.IsMap()) throw ConfigError("config must be a mapping at the top level", line_of(root));

    ScenarioConfig c;
    bool have_scheme = false, have_area = false, have_tau = false, have_delta = false;
    bool have_eb = false, have_gu = false;
    int delta_line = 0, eb_line = 0, gu_line = 0, diss_line = 0;

    for_each_key(root, "config",
                 {"name", "scheme", "pulse", "system", "bath", "dissipator", "numerics", "sweep", "outputs",
                  "optimize", "check"},
                 [&](const std::string& key, const YAML::Node& v) {
        if (key == "name") {
            c.name = scalar(v, key);
            if (c.name.empty() || c.name.find_first_of("/\\ ") != std::string::npos)
                throw ConfigError("name must be non-empty without spaces or slashes", line_of(v));
        } else if (key == "scheme") {
            const std::string s = scalar(v, key);
            if (s == "resonant") c.scheme = Scheme::Resonant;
            else if (s == "phonon_assisted") c.scheme = Scheme::PhononAssisted;
            else if (s == "tpe_biexciton") c.scheme = Scheme::TpeBiexciton;
            else throw ConfigError("unknown scheme '" + s + "' (resonant, phonon_assisted, tpe_biexciton)", line_of(v));
            have_scheme = true;
        } else if (key == "pulse") {
            for_each_key(v, "pulse", {"area", "tau_p", "tau_fwhm", "center"}, [&](const std::string& k, const YAML::Node& x) {
                if (k == "area") { c.pulse.area_theta = quantity(x, k, "area"); have_area = true; }
                else if (k == "tau_p") {
                    if (have_tau) throw ConfigError("give either tau_p or tau_fwhm", line_of(x));
                    c.pulse.tau_p = quantity(x, k, "time");
                    have_tau = true;
                } else if (k == "tau_fwhm") {
                    if (have_tau) throw ConfigError("give either tau_p or tau_fwhm", line_of(x));
                    c.pulse.tau_p = units::tau_p_from_fwhm(quantity(x, k, "time"));
                    have_tau = true;
                } else c.pulse.center = quantity(x, k, "time");
            });
        } else if (key == "system") {
            for_each_key(v, "system",
                         {"g", "kappa", "gamma", "delta_l", "binding_energy", "gamma_u", "n_max", "compensate_polaron_shift",
                          "exclude_cavity_from_eigenbasis"},
                         [&](const std::string& k, const YAML::Node& x) {
                if (k == "g") c.g = quantity(x, k, "energy");
                else if (k == "kappa") c.kappa = quantity(x, k, "energy");
                else if (k == "gamma") c.gamma = quantity(x, k, "energy");
                else if (k == "delta_l") { c.delta_l = quantity(x, k, "energy"); have_delta = true; delta_line = line_of(x); }
                else if (k == "binding_energy") { c.binding_energy = quantity(x, k, "energy"); have_eb = true; eb_line = line_of(x); }
                else if (k == "gamma_u") { c.gamma_u = quantity(x, k, "energy"); have_gu = true; gu_line = line_of(x); }
                else if (k == "n_max") c.n_max = plain_int(x, k);
                else if (k == "compensate_polaron_shift") c.compensate_polaron_shift = plain_bool(x, k);
                else c.dissipator_options.exclude_cavity_from_eigenbasis = plain_bool(x, k);
            });
        } else if (key == "bath") {
            for_each_key(v, "bath", {"temperature", "alpha", "omega_b"}, [&](const std::string& k, const YAML::Node& x) {
                if (k == "temperature") c.bath.temperature = quantity(x, k, "temperature");
                else if (k == "alpha") c.bath.alpha = quantity(x, k, "coupling");
                else c.bath.omega_b = quantity(x, k, "energy");
            });
        } else if (key == "dissipator") {
            try {
                c.dissipator = models::dissipator_from_string(scalar(v, key));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what(), line_of(v));
            }
            diss_line = line_of(v);
        } else if (key == "numerics") {
            for_each_key(v, "numerics", {"dt", "stride", "t_max", "threshold", "outer_points", "group_size"},
                         [&](const std::string& k, const YAML::Node& x) {
                if (k == "dt") c.numerics.dt = quantity(x, k, "time");
                else if (k == "stride") c.numerics.stride = plain_int(x, k);
                else if (k == "t_max") c.numerics.t_max = quantity(x, k, "time");
                else if (k == "threshold") c.numerics.threshold = plain_double(x, k);
                else if (k == "outer_points") c.numerics.outer_points = plain_int(x, k);
                else c.numerics.group_size = plain_int(x, k);
            });
        } else if (key == "sweep") {
            for_each_key(v, "sweep", {"pulse_area", "tau_p", "delta_l", "population_only"},
                         [&](const std::string& k, const YAML::Node& x) {
                if (k == "pulse_area") c.sweep.pulse_area = quantity_list(x, k, "area");
                else if (k == "tau_p") c.sweep.tau_p = quantity_list(x, k, "time");
                else if (k == "delta_l") { c.sweep.delta_l = quantity_list(x, k, "energy"); delta_line = line_of(x); }
                else c.sweep.population_only = plain_bool(x, k);
            });
        } else if (key == "outputs") {
            for_each_key(v, "outputs", {"trajectory", "surfaces", "fom"}, [&](const std::string& k, const YAML::Node& x) {
                if (k == "trajectory") c.outputs.trajectory = plain_bool(x, k);
                else if (k == "surfaces") c.outputs.surfaces = plain_bool(x, k);
                else c.outputs.fom = plain_bool(x, k);
            });
        } else if (key == "optimize") {
            OptimizeSettings o;
            if (!v.IsNull())
                for_each_key(v, "optimize", {"area_min", "area_max", "coarse_points", "tolerance"},
                             [&](const std::string& k, const YAML::Node& x) {
                    if (k == "area_min") o.area_min = quantity(x, k, "area");
                    else if (k == "area_max") o.area_max = quantity(x, k, "area");
                    else if (k == "coarse_points") o.coarse_points = plain_int(x, k);
                    else o.tolerance = quantity(x, k, "area");
                });
            c.optimize = o;
        } else if (key == "check") {
            for_each_key(v, "check", {"n_a_min", "n_a_max", "indist_min", "d1_max", "d2_max"},
                         [&](const std::string& k, const YAML::Node& x) {
                const double d = plain_double(x, k);
                if (k == "n_a_min") c.check.n_a_min = d;
                else if (k == "n_a_max") c.check.n_a_max = d;
                else if (k == "indist_min") c.check.indist_min = d;
                else if (k == "d1_max") c.check.d1_max = d;
                else c.check.d2_max = d;
            });
        }
    });

    if (!have_scheme) throw ConfigError("missing required key 'scheme'", 1);
    if (!have_tau) throw ConfigError("pulse needs tau_p or tau_fwhm", line_of(root["pulse"]));
    if (!have_area && !c.optimize && c.sweep.pulse_area.empty())
        throw ConfigError("pulse needs an area (or an optimize section, or a pulse_area sweep)", line_of(root["pulse"]));

    if (c.scheme == Scheme::TpeBiexciton) {
        if (!have_eb) throw ConfigError("scheme tpe_biexciton requires system.binding_energy", line_of(root["system"]));
        if (!have_gu) throw ConfigError("scheme tpe_biexciton requires system.gamma_u", line_of(root["system"]));
        if (have_delta || !c.sweep.delta_l.empty())
            throw ConfigError("delta_l does not apply to tpe_biexciton (the laser sits at half the biexciton energy)",
                              delta_line);
        if (c.dissipator == DissipatorKind::WeakSimplified)
            throw ConfigError("the simplified dissipator is defined for the two-level schemes only", diss_line);
    } else {
        if (have_eb) throw ConfigError("binding_energy is only valid for tpe_biexciton", eb_line);
        if (have_gu) throw ConfigError("gamma_u is only valid for tpe_biexciton", gu_line);
    }
    if (c.scheme == Scheme::Resonant && (c.delta_l != 0.0 || !c.sweep.delta_l.empty()))
        throw ConfigError("scheme resonant requires delta_l = 0; use phonon_assisted for a detuned drive", delta_line);
    if (c.scheme == Scheme::PhononAssisted) {
        if (!have_delta && c.sweep.delta_l.empty())
            throw ConfigError("scheme phonon_assisted requires system.delta_l", line_of(root["system"]));
    }
    if (c.optimize && !c.sweep.pulse_area.empty())
        throw ConfigError("optimize and a pulse_area sweep are mutually exclusive", line_of(root["optimize"]));
    c.validate();
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void ScenarioConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(g >= 0.0)) fail("g must be >= 0");
    if (!(kappa > 0.0)) fail("kappa must be > 0");
    if (!(gamma >= 0.0)) fail("gamma must be >= 0");
    if (n_max < 1) fail("n_max must be >= 1");
    if (numerics.stride < 1) fail("numerics.stride must be >= 1");
    if (!(numerics.dt > 0.0)) fail("numerics.dt must be > 0");
    if (!(numerics.threshold > 0.0)) fail("numerics.threshold must be > 0");
    if (numerics.outer_points < 2) fail("numerics.outer_points must be >= 2");
    if (numerics.group_size < 1) fail("numerics.group_size must be >= 1");
    if (optimize) {
        if (!(optimize->area_min > 0.0 && optimize->area_max > optimize->area_min))
            fail("optimize needs 0 < area_min < area_max");
        if (optimize->coarse_points < 3) fail("optimize.coarse_points must be >= 3");
        if (!(optimize->tolerance > 0.0)) fail("optimize.tolerance must be > 0");
    }
    for (double t : sweep.tau_p)
        if (!(t > 0.0)) fail("sweep tau_p values must be > 0");
    for (double a : sweep.pulse_area)
        if (!(a >= 0.0)) fail("sweep pulse_area values must be >= 0");
    try {
        pulse.validate();
        bath.validate();
        (void)build_model();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

models::SystemModel ScenarioConfig::build_model() const {
    if (scheme == Scheme::TpeBiexciton) {
        models::BiexcitonModel m;
        m.binding_energy = binding_energy;
        m.g = g;
        m.kappa = kappa;
        m.gamma = gamma;
        m.gamma_u = gamma_u;
        m.n_max = n_max;
        m.pulse = pulse;
        m.bath = bath;
        m.compensate_polaron_shift = compensate_polaron_shift;
        return models::SystemModel(m);
    }
    models::TwoLevelCavityModel m;
    m.delta_l = delta_l;
    m.g = g;
    m.kappa = kappa;
    m.gamma = gamma;
    m.n_max = n_max;
    m.pulse = pulse;
    m.bath = bath;
    return models::SystemModel(m);
}

namespace {

json to_json(const ScenarioConfig& c) {
    json j;
    j["name"] = c.name;
    j["scheme"] = to_string(c.scheme);
    j["pulse"] = {{"area_rad", c.pulse.area_theta}, {"tau_p_ps", c.pulse.tau_p},
                  {"center_ps", c.pulse.center_time()}};
    j["system"] = {{"g", c.g}, {"kappa", c.kappa}, {"gamma", c.gamma}, {"n_max", c.n_max},
                   {"exclude_cavity_from_eigenbasis", c.dissipator_options.exclude_cavity_from_eigenbasis}};
    if (c.scheme == Scheme::TpeBiexciton) {
        j["system"]["binding_energy"] = c.binding_energy;
        j["system"]["gamma_u"] = c.gamma_u;
        j["system"]["compensate_polaron_shift"] = c.compensate_polaron_shift;
    } else {
        j["system"]["delta_l"] = c.delta_l;
    }
    j["bath"] = {{"alpha_ps2", c.bath.alpha}, {"omega_b", c.bath.omega_b}, {"temperature_K", c.bath.temperature}};
    j["dissipator"] = models::to_string(c.dissipator);
    j["numerics"] = {{"dt_ps", c.numerics.dt}, {"stride", c.numerics.stride}, {"threshold", c.numerics.threshold},
                     {"outer_points", c.numerics.outer_points}, {"group_size", c.numerics.group_size}};
    if (c.numerics.t_max) j["numerics"]["t_max_ps"] = *c.numerics.t_max;
    j["sweep"] = {{"pulse_area_rad", c.sweep.pulse_area}, {"tau_p_ps", c.sweep.tau_p},
                  {"delta_l", c.sweep.delta_l}, {"population_only", c.sweep.population_only}};
    j["outputs"] = {{"trajectory", c.outputs.trajectory}, {"surfaces", c.outputs.surfaces}, {"fom", c.outputs.fom}};
    if (c.optimize)
        j["optimize"] = {{"area_min_rad", c.optimize->area_min}, {"area_max_rad", c.optimize->area_max},
                         {"coarse_points", c.optimize->coarse_points}, {"tolerance_rad", c.optimize->tolerance}};
    json chk = json::object();
    auto put = [&](const char* k, const std::optional<double>& v) { if (v) chk[k] = *v; };
    put("n_a_min", c.check.n_a_min);
    put("n_a_max", c.check.n_a_max);
    put("indist_min", c.check.indist_min);
    put("d1_max", c.check.d1_max);
    put("d2_max", c.check.d2_max);
    j["check"] = chk;
    return j;
}

std::string sha256_hex(const std::string& data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 failed");
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
    return out;
}

} // namespace

std::string ScenarioConfig::canonical() const { return to_json(*this).dump(); }
std::string ScenarioConfig::hash() const { return sha256_hex(canonical()); }

// ---------------------------------------------------------------------------
// Runs

std::filesystem::path resolve_output_dir(const std::optional<std::string>& explicit_dir) {
    if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
    if (const char* env = std::getenv("QDSPS_OUTPUT_DIR"); env && *env) return env;
    return "qdsps_out";
}

namespace {

std::string num(double v) { return fmt::format("{:.12g}", v); }

std::ofstream open_csv(const std::filesystem::path& path, const std::string& hash) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "# qdsps " << engine_version << " config_hash=" << hash << "\n";
    return os;
}

std::string emitter_name(const ScenarioConfig& c) { return c.scheme == Scheme::TpeBiexciton ? "u" : "x"; }

double interpolate(const std::vector<double>& t, const std::vector<double>& y, double at) {
    if (t.empty()) return 0.0;
    if (at <= t.front()) return y.front();
    if (at >= t.back()) return y.back();
    const auto it = std::upper_bound(t.begin(), t.end(), at);
    const std::size_t i = static_cast<std::size_t>(it - t.begin());
    const double w = (at - t[i - 1]) / (t[i] - t[i - 1]);
    return (1.0 - w) * y[i - 1] + w * y[i];
}

void write_trajectory_csv(const std::filesystem::path& path, const std::string& hash, const evolver::Trajectory& tr,
                          const models::SystemModel& model) {
    auto os = open_csv(path, hash);
    const bool two_level = !model.is_biexciton();
    const bool rates = two_level && model.bath_params().alpha > 0.0;
    os << "t_ps,omega_rad_per_ps";
    for (const auto& [name, op] : model.populations()) os << ",pop_" << name;
    os << ",n_cav,re_a,im_a";
    if (rates) os << ",gamma_plus_per_ps";
    os << "\n";
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        const double t = tr.times[i];
        os << num(t) << ',' << num(model.rabi(t));
        for (const auto& [name, op] : model.populations()) os << ',' << num(tr.observables.at(name)[i]);
        os << ',' << num(tr.observables.at("n_cav")[i]) << ',' << num(tr.a_mean[i].real()) << ','
           << num(tr.a_mean[i].imag());
        if (rates) os << ',' << num(models::gamma_plus_at(t, model));
        os << "\n";
    }
}

void write_surface(const std::filesystem::path& path, const std::string& hash, const correlators::CorrelationSurface& s) {
    auto os = open_csv(path, hash);
    correlators::write_surface_csv(os, s);
}

json record_json(const RunRecord& r) {
    json j;
    j["name"] = r.name;
    j["config_hash"] = r.config_hash;
    j["engine_version"] = r.engine_version;
    j["theta_rad"] = r.theta;
    j["theta_over_pi"] = r.theta / units::pi;
    j["tau_p_ps"] = r.tau_p;
    j["delta_l_ueV"] = units::rad_per_ps_to_ueV(r.delta_l);
    j["n_a"] = r.n_a;
    if (r.fom)
        j["fom"] = {{"n_a", r.fom->n_a}, {"indistinguishability", r.fom->indist}, {"d1", r.fom->d1},
                    {"d2", r.fom->d2}, {"purcell", r.fom->purcell}};
    j["probe_population"] = r.probe_population;
    j["max_population"] = r.max_population;
    j["max_trace_error"] = r.max_trace_error;
    j["max_hermiticity_error"] = r.max_hermiticity_error;
    j["paths"] = r.paths;
    j["wall_clock_s"] = r.wall_clock_s;
    j["warnings"] = r.warnings;
    j["error"] = r.error;
    return j;
}

void write_sidecar(const std::filesystem::path& path, const json& body) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << body.dump(2) << "\n";
}

void append_unique(std::vector<std::string>& to, const std::vector<std::string>& from) {
    for (const auto& w : from)
        if (std::find(to.begin(), to.end(), w) == to.end()) to.push_back(w);
}

enum class Depth { Probe, Populations, Full };

// Evolves one configuration. Probe stops at center + 2 tau_p; Populations
// runs to decay without surfaces; Full adds the figures of merit.
RunRecord execute(const ScenarioConfig& cfg, const RunContext& ctx, Depth depth, bool write_files,
                  const std::string& stem) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord r;
    r.name = stem;
    r.config_hash = cfg.hash();
    r.theta = cfg.pulse.area_theta;
    r.tau_p = cfg.pulse.tau_p;
    r.delta_l = cfg.scheme == Scheme::TpeBiexciton ? 0.0 : cfg.delta_l;

    const models::SystemModel model = cfg.build_model();
    append_unique(r.warnings, model.warnings());
    const auto rho0 = algebra::DensityMatrix::basis_state(model.space(), {0, 0});
    const double probe_time = cfg.pulse.center_time() + 2.0 * cfg.pulse.tau_p;

    evolver::IntegrateOptions iopt;
    iopt.record_states = depth == Depth::Full;
    iopt.dissipator = cfg.dissipator_options;
    evolver::Trajectory tr;
    if (depth == Depth::Probe) {
        const double block = cfg.numerics.dt * cfg.numerics.stride;
        evolver::TimeGrid grid{0.0, block * std::ceil(probe_time / block - 1e-9), cfg.numerics.dt, cfg.numerics.stride};
        tr = evolver::integrate(rho0, grid, model, cfg.dissipator, iopt);
    } else {
        evolver::DecayOptions d;
        d.dt = cfg.numerics.dt;
        d.sample_stride = cfg.numerics.stride;
        d.threshold = cfg.numerics.threshold;
        d.t_max = cfg.numerics.t_max;
        d.integrate = iopt;
        tr = evolver::run_until_decayed(rho0, model, cfg.dissipator, d);
        r.n_a = correlators::emitted_photon_number(tr, model.kappa());
    }
    append_unique(r.warnings, tr.warnings);
    r.max_trace_error = tr.max_trace_error;
    r.max_hermiticity_error = tr.max_hermiticity_error;
    const auto& pop = tr.observables.at(emitter_name(cfg));
    r.probe_population = interpolate(tr.times, pop, probe_time);
    r.max_population = *std::max_element(pop.begin(), pop.end());

    std::optional<correlators::Evaluation> ev;
    if (depth == Depth::Full) {
        correlators::RegressionOptions ro;
        ro.group_size = cfg.numerics.group_size;
        ro.kind = cfg.dissipator;
        ro.dissipator = cfg.dissipator_options;
        ev = correlators::evaluate(tr, model, ro, cfg.numerics.outer_points);
        r.fom = ev->fom;
        r.n_a = ev->fom.n_a;
        append_unique(r.warnings, ev->warnings);
    }

    if (write_files) {
        if (cfg.outputs.trajectory) {
            const auto p = ctx.out_dir / (stem + "_trajectory.csv");
            write_trajectory_csv(p, r.config_hash, tr, model);
            r.paths.push_back(p.string());
        }
        if (ev && cfg.outputs.surfaces) {
            for (const auto* s : {&ev->g1, &ev->g2, &ev->g2pop, &ev->mean_field}) {
                std::string kind = correlators::to_string(s->kind);
                std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char ch) { return std::tolower(ch); });
                const auto p = ctx.out_dir / (stem + "_" + kind + ".csv");
                write_surface(p, r.config_hash, *s);
                r.paths.push_back(p.string());
            }
        }
    }
    r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

Depth depth_for(const ScenarioConfig& cfg) {
    if (!cfg.outputs.fom) return Depth::Probe;
    if (cfg.sweep.population_only) return Depth::Populations;
    return Depth::Full;
}

const char* fom_header = "pulse_area_pi,tau_p_ps,delta_l_ueV,status,n_a,indistinguishability,d1,d2,purcell,"
                         "probe_population,max_population";

void write_fom_row(std::ostream& os, const RunRecord& r) {
    os << num(r.theta / units::pi) << ',' << num(r.tau_p) << ',' << num(units::rad_per_ps_to_ueV(r.delta_l)) << ','
       << (r.ok() ? "ok" : "error") << ',';
    if (!r.ok()) {
        os << ",,,,,,\n";
        return;
    }
    os << num(r.n_a) << ',';
    if (r.fom) os << num(r.fom->indist) << ',' << num(r.fom->d1) << ',' << num(r.fom->d2) << ',' << num(r.fom->purcell);
    else os << ",,,";
    os << ',' << num(r.probe_population) << ',' << num(r.max_population) << "\n";
}

void write_fom_table(const std::filesystem::path& path, const std::string& hash, const std::vector<RunRecord>& rows) {
    auto os = open_csv(path, hash);
    os << fom_header << "\n";
    for (const auto& r : rows) write_fom_row(os, r);
}

} // namespace

RunRecord run_scenario(const ScenarioConfig& cfg, const RunContext& ctx) {
    RunRecord r = execute(cfg, ctx, depth_for(cfg), ctx.write_files, cfg.name);
    if (ctx.write_files) {
        const auto table = ctx.out_dir / (cfg.name + "_fom.csv");
        write_fom_table(table, r.config_hash, {r});
        r.paths.push_back(table.string());
        const auto side = ctx.out_dir / (cfg.name + ".run.json");
        json body = record_json(r);
        body["config"] = json::parse(cfg.canonical());
        write_sidecar(side, body);
    }
    return r;
}

namespace {

std::vector<ScenarioConfig> expand(const ScenarioConfig& cfg) {
    const std::vector<double> areas = cfg.sweep.pulse_area.empty() ? std::vector<double>{cfg.pulse.area_theta} : cfg.sweep.pulse_area;
    const std::vector<double> taus = cfg.sweep.tau_p.empty() ? std::vector<double>{cfg.pulse.tau_p} : cfg.sweep.tau_p;
    const std::vector<double> deltas = cfg.sweep.delta_l.empty() ? std::vector<double>{cfg.delta_l} : cfg.sweep.delta_l;
    std::vector<ScenarioConfig> points;
    for (double a : areas)
        for (double tp : taus)
            for (double dl : deltas) {
                ScenarioConfig p = cfg;
                p.sweep = SweepAxes{};
                p.sweep.population_only = cfg.sweep.population_only;
                p.pulse.area_theta = a;
                p.pulse.tau_p = tp;
                if (!cfg.sweep.tau_p.empty()) p.pulse.center.reset();
                p.delta_l = dl;
                points.push_back(std::move(p));
            }
    return points;
}

} // namespace

std::vector<RunRecord> run_sweep(const ScenarioConfig& cfg, const RunContext& ctx) {
    if (cfg.sweep.empty() && !cfg.optimize) return {run_scenario(cfg, ctx)};
    const auto points = expand(cfg);
    std::vector<RunRecord> out(points.size());
    const std::string hash = cfg.hash();
    tbb::parallel_for(std::size_t{0}, points.size(), [&](std::size_t i) {
        const std::string stem = fmt::format("{}_p{:03d}", cfg.name, i);
        try {
            if (cfg.optimize) {
                ScenarioConfig p = points[i];
                p.name = stem;
                RunContext sub = ctx;
                sub.write_files = false;
                auto res = optimize_area(p, sub);
                out[i] = std::move(res.record);
            } else {
                out[i] = execute(points[i], ctx, depth_for(points[i]), ctx.write_files, stem);
            }
        } catch (const std::exception& e) {
            RunRecord r;
            r.name = stem;
            r.config_hash = points[i].hash();
            r.theta = points[i].pulse.area_theta;
            r.tau_p = points[i].pulse.tau_p;
            r.delta_l = points[i].delta_l;
            r.error = e.what();
            out[i] = std::move(r);
        }
        if (out[i].ok())
            spdlog::info("{}: theta = {:.3g} pi, tau_p = {:.3g} ps, N_a = {:.4f}", stem, out[i].theta / units::pi,
                         out[i].tau_p, out[i].n_a);
        else
            spdlog::error("{}: {}", stem, out[i].error);
    });
    if (ctx.write_files) {
        const auto table = ctx.out_dir / (cfg.name + "_sweep.csv");
        write_fom_table(table, hash, out);
        json body;
        body["config_hash"] = hash;
        body["engine_version"] = engine_version;
        body["config"] = json::parse(cfg.canonical());
        body["table"] = table.string();
        body["points"] = json::array();
        for (const auto& r : out) body["points"].push_back(record_json(r));
        write_sidecar(ctx.out_dir / (cfg.name + ".run.json"), body);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Area optimisation

OptimizeResult optimize_area(const ScenarioConfig& cfg_in, const RunContext& ctx) {
    const OptimizeSettings opt = cfg_in.optimize.value_or(OptimizeSettings{});
    ScenarioConfig base = cfg_in;
    base.sweep = SweepAxes{};
    OptimizeResult res;
    std::vector<std::string> notes;

    auto objective = [&](double theta) {
        ScenarioConfig p = base;
        p.pulse.area_theta = theta;
        return execute(p, ctx, Depth::Populations, false, p.name).n_a;
    };

    const int n = opt.coarse_points;
    res.coarse.theta.resize(n);
    res.coarse.n_a.resize(n);
    for (int i = 0; i < n; ++i)
        res.coarse.theta[i] = opt.area_min + (opt.area_max - opt.area_min) * i / (n - 1);
    tbb::parallel_for(0, n, [&](int i) { res.coarse.n_a[i] = objective(res.coarse.theta[i]); });
    res.evaluations = n;

    const auto best_it = std::max_element(res.coarse.n_a.begin(), res.coarse.n_a.end());
    double best_theta = res.coarse.theta[best_it - res.coarse.n_a.begin()];
    double best_val = *best_it;
    const double spread = best_val - *std::min_element(res.coarse.n_a.begin(), res.coarse.n_a.end());

    if (spread < 1e-3) {
        notes.push_back(fmt::format("flat objective: N_a varies by {:.2e} over the area grid; using the grid maximum",
                                    spread));
        spdlog::warn("{}", notes.back());
    } else {
        // The objective oscillates with the area, so every coarse local maximum
        // (best three) is refined and the best refined point wins.
        std::vector<int> peaks;
        for (int i = 0; i < n; ++i) {
            const bool left = i == 0 || res.coarse.n_a[i] >= res.coarse.n_a[i - 1];
            const bool right = i == n - 1 || res.coarse.n_a[i] >= res.coarse.n_a[i + 1];
            if (left && right) peaks.push_back(i);
        }
        std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return res.coarse.n_a[a] > res.coarse.n_a[b]; });
        if (peaks.size() > 3) peaks.resize(3);

        struct Refined {
            double theta{0.0}, value{-1.0};
            int evaluations{0};
        };
        std::vector<Refined> refined(peaks.size());
        tbb::parallel_for(std::size_t{0}, peaks.size(), [&](std::size_t p) {
            const int b = peaks[p];
            Refined r{res.coarse.theta[b], res.coarse.n_a[b], 0};
            double lo = res.coarse.theta[std::max(0, b - 1)];
            double hi = res.coarse.theta[std::min(n - 1, b + 1)];
            const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
            double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
            double f1 = objective(x1), f2 = objective(x2);
            r.evaluations += 2;
            auto consider = [&](double x, double f) {
                if (f > r.value) {
                    r.value = f;
                    r.theta = x;
                }
            };
            consider(x1, f1);
            consider(x2, f2);
            while (hi - lo >= opt.tolerance) {
                if (f1 >= f2) {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - inv_phi * (hi - lo);
                    f1 = objective(x1);
                    consider(x1, f1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + inv_phi * (hi - lo);
                    f2 = objective(x2);
                    consider(x2, f2);
                }
                ++r.evaluations;
            }
            refined[p] = r;
        });
        for (const auto& r : refined) {
            res.evaluations += r.evaluations;
            if (r.value > best_val) {
                best_val = r.value;
                best_theta = r.theta;
            }
        }
        const double edge = 0.5 * (res.coarse.theta[1] - res.coarse.theta[0]);
        if (best_theta - opt.area_min < edge || opt.area_max - best_theta < edge)
            notes.push_back(fmt::format("optimum {:.3f} pi lies at the edge of the search interval", best_theta / units::pi));
    }
    res.theta_opt = best_theta;
    spdlog::info("{}: optimum area {:.4f} pi (N_a = {:.4f}, {} population runs)", base.name, best_theta / units::pi,
                 best_val, res.evaluations);

    ScenarioConfig final_cfg = base;
    final_cfg.pulse.area_theta = best_theta;
    final_cfg.optimize.reset();
    if (best_val < 1e-6) {
        // Nothing reaches the cavity, so I, D1 and D2 have no normalisation.
        final_cfg.sweep.population_only = true;
        notes.push_back("no emission at the optimum; figures of merit beyond N_a are undefined");
    }
    res.record = run_scenario(final_cfg, ctx);
    append_unique(res.record.warnings, notes);
    if (ctx.write_files) {
        const auto scan = ctx.out_dir / (base.name + "_area_scan.csv");
        auto os = open_csv(scan, base.hash());
        os << "pulse_area_pi,n_a\n";
        for (int i = 0; i < n; ++i) os << num(res.coarse.theta[i] / units::pi) << ',' << num(res.coarse.n_a[i]) << "\n";
        res.record.paths.push_back(scan.string());
        json body = record_json(res.record);
        body["config"] = json::parse(base.canonical());
        body["config_hash"] = base.hash();
        body["theta_opt_over_pi"] = best_theta / units::pi;
        body["evaluations"] = res.evaluations;
        write_sidecar(ctx.out_dir / (base.name + ".run.json"), body);
    }
    return res;
}

OptimizeResult optimize_tpe_area(const ScenarioConfig& cfg, const RunContext& ctx) {
    if (cfg.scheme != Scheme::TpeBiexciton) throw ConfigError("tpe-optimize requires scheme tpe_biexciton");
    return optimize_area(cfg, ctx);
}

// ---------------------------------------------------------------------------
// Dissipator comparison

DissipatorComparison compare_dissipators(const ScenarioConfig& cfg, const RunContext& ctx) {
    const models::SystemModel model = cfg.build_model();
    const auto rho0 = algebra::DensityMatrix::basis_state(model.space(), {0, 0});
    std::vector<DissipatorKind> kinds = {DissipatorKind::WeakFull, DissipatorKind::Polaron};
    if (!model.is_biexciton()) kinds.push_back(DissipatorKind::WeakSimplified);

    double t_end = 0.0;
    if (cfg.numerics.t_max) {
        t_end = *cfg.numerics.t_max;
    } else {
        evolver::DecayOptions d;
        d.dt = cfg.numerics.dt;
        d.sample_stride = cfg.numerics.stride;
        d.threshold = cfg.numerics.threshold;
        d.integrate.record_states = false;
        d.integrate.dissipator = cfg.dissipator_options;
        t_end = evolver::run_until_decayed(rho0, model, DissipatorKind::WeakFull, d).t_end();
    }
    const double block = cfg.numerics.dt * cfg.numerics.stride;
    const evolver::TimeGrid grid{0.0, block * std::ceil(t_end / block - 1e-9), cfg.numerics.dt, cfg.numerics.stride};

    DissipatorComparison out;
    std::vector<evolver::Trajectory> runs(kinds.size());
    tbb::parallel_for(std::size_t{0}, kinds.size(), [&](std::size_t i) {
        evolver::IntegrateOptions o;
        o.record_states = false;
        o.dissipator = cfg.dissipator_options;
        runs[i] = evolver::integrate(rho0, grid, model, kinds[i], o);
    });
    out.times = runs.front().times;
    const std::string em = emitter_name(cfg);
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        out.labels.push_back(models::to_string(kinds[i]));
        out.emitter.push_back(runs[i].observables.at(em));
        out.n_cav.push_back(runs[i].observables.at("n_cav"));
        double diff = 0.0;
        for (const auto& [name, op] : model.populations()) {
            const auto& a = runs[0].observables.at(name);
            const auto& b = runs[i].observables.at(name);
            for (std::size_t k = 0; k < a.size(); ++k) diff = std::max(diff, std::abs(a[k] - b[k]));
        }
        out.max_difference.push_back(diff);
    }

    if (ctx.write_files) {
        const std::string hash = cfg.hash();
        const auto path = ctx.out_dir / (cfg.name + "_compare.csv");
        auto os = open_csv(path, hash);
        os << "t_ps";
        for (const auto& l : out.labels) {
            for (const auto& [name, op] : model.populations()) os << ',' << l << "_pop_" << name;
            os << ',' << l << "_n_cav";
        }
        os << "\n";
        for (std::size_t k = 0; k < out.times.size(); ++k) {
            os << num(out.times[k]);
            for (std::size_t i = 0; i < runs.size(); ++i) {
                for (const auto& [name, op] : model.populations()) os << ',' << num(runs[i].observables.at(name)[k]);
                os << ',' << num(runs[i].observables.at("n_cav")[k]);
            }
            os << "\n";
        }
        out.paths.push_back(path.string());
        json body;
        body["config_hash"] = hash;
        body["engine_version"] = engine_version;
        body["config"] = json::parse(cfg.canonical());
        body["labels"] = out.labels;
        body["max_population_difference_vs_weak_full"] = out.max_difference;
        body["paths"] = out.paths;
        write_sidecar(ctx.out_dir / (cfg.name + ".run.json"), body);
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> check_record(const RunRecord& r, const CheckThresholds& c) {
    std::vector<std::string> fails;
    if (!r.ok()) {
        fails.push_back("run failed: " + r.error);
        return fails;
    }
    auto need_fom = [&](const char* what) {
        if (!r.fom) fails.push_back(std::string(what) + " requested but no figures of merit were computed");
        return r.fom.has_value();
    };
    if (c.n_a_min && r.n_a < *c.n_a_min) fails.push_back(fmt::format("N_a = {:.4f} < {:.4f}", r.n_a, *c.n_a_min));
    if (c.n_a_max && r.n_a > *c.n_a_max) fails.push_back(fmt::format("N_a = {:.4f} > {:.4f}", r.n_a, *c.n_a_max));
    if (c.indist_min && need_fom("indist_min") && r.fom->indist < *c.indist_min)
        fails.push_back(fmt::format("I = {:.4f} < {:.4f}", r.fom->indist, *c.indist_min));
    if (c.d1_max && need_fom("d1_max") && r.fom->d1 > *c.d1_max)
        fails.push_back(fmt::format("D1 = {:.4g} > {:.4g}", r.fom->d1, *c.d1_max));
    if (c.d2_max && need_fom("d2_max") && r.fom->d2 > *c.d2_max)
        fails.push_back(fmt::format("D2 = {:.4g} > {:.4g}", r.fom->d2, *c.d2_max));
    return fails;
}

// ---------------------------------------------------------------------------
// Presets

namespace {

const std::vector<std::pair<std::string, std::string>>& presets() {
    static const std::vector<std::pair<std::string, std::string>> p = {
        {"fig2-resonant", R"(# Resonant pi pulse, tau_p = 2 ps.
name: fig2-resonant
scheme: resonant
pulse:
  area: 1 pi
  tau_p: 2 ps
dissipator: weak_full
outputs:
  trajectory: true
  surfaces: false
check:
  n_a_min: 0.88
  indist_min: 0.94
)"},
        {"fig2-offres", R"(# Phonon-assisted figures of merit against pulse area for two widths and
# two detunings.
name: fig2-offres
scheme: phonon_assisted
pulse:
  tau_p: 6 ps
system:
  delta_l: 1 meV
dissipator: weak_full
sweep:
  pulse_area: [2 pi, 4 pi, 6 pi, 8 pi, 10 pi, 12 pi, 16 pi, 20 pi, 25 pi, 30 pi]
  tau_p: [6 ps, 20 ps]
  delta_l: [0.5 meV, 1 meV]
outputs:
  trajectory: false
)"},
        {"offres-short", R"(# Phonon-assisted inversion, tau_p = 6 ps, area chosen for maximum N_a.
name: offres-short
scheme: phonon_assisted
pulse:
  tau_p: 6 ps
system:
  delta_l: 1 meV
dissipator: weak_full
optimize:
  area_min: 1 pi
  area_max: 30 pi
  coarse_points: 12
  tolerance: 0.05 pi
)"},
        {"offres-long", R"(# Phonon-assisted inversion with a long pulse (FWHM 33.3 ps).
name: offres-long
scheme: phonon_assisted
pulse:
  tau_p: 20 ps
system:
  delta_l: 1 meV
dissipator: weak_full
optimize:
  area_min: 1 pi
  area_max: 30 pi
  coarse_points: 12
  tolerance: 0.05 pi
)"},
        {"fig3-inversion-map", R"(# Exciton population at center + 2 tau_p over detuning and pulse area.
name: fig3-inversion-map
scheme: phonon_assisted
pulse:
  tau_p: 6 ps
system:
  delta_l: 1 meV
dissipator: weak_simplified
sweep:
  pulse_area: [1 pi, 2 pi, 4 pi, 6 pi, 8 pi, 10 pi, 12 pi, 14 pi, 16 pi, 18 pi, 20 pi]
  tau_p: [2 ps, 4 ps, 6 ps, 8 ps]
  delta_l: [0.25 meV, 0.5 meV, 0.75 meV, 1 meV, 1.25 meV, 1.5 meV]
  population_only: true
outputs:
  trajectory: false
  fom: false
)"},
        {"fig4-pulseshape", R"(# Population and phonon scattering rate against time for three areas.
name: fig4-pulseshape
scheme: phonon_assisted
pulse:
  tau_p: 4 ps
system:
  delta_l: 750 ueV
dissipator: weak_full
sweep:
  pulse_area: [4 pi, 8 pi, 18 pi]
  tau_p: [4 ps, 10 ps]
  population_only: true
outputs:
  trajectory: true
)"},
        {"fig5-tpe", R"(# Two-photon excitation of the biexciton, area chosen for maximum N_a.
name: fig5-tpe
scheme: tpe_biexciton
pulse:
  tau_fwhm: 7.3 ps
system:
  binding_energy: 3 meV
  gamma_u: 2 ueV
  compensate_polaron_shift: true
dissipator: weak_full
optimize:
  area_min: 1 pi
  area_max: 30 pi
  coarse_points: 12
  tolerance: 0.05 pi
check:
  d1_max: 0.03
  d2_max: 0.001
)"},
        {"figA1-polaron-compare", R"(# Weak-coupling against polaron populations for a weak resonant pulse.
name: figA1-polaron-compare
scheme: resonant
pulse:
  area: 5 pi
  tau_p: 20 ps
bath:
  temperature: 4 K
)"},
        {"figB1-simplified-compare", R"(# Simplified against full weak-coupling dissipator during a detuned pulse.
name: figB1-simplified-compare
scheme: phonon_assisted
pulse:
  area: 10 pi
  tau_p: 4 ps
system:
  delta_l: 500 ueV
)"},
    };
    return p;
}

} // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& [n, t] : presets()) out.push_back(n);
    return out;
}

std::string preset_text(const std::string& name) {
    for (const auto& [n, t] : presets())
        if (n == name) return t;
    throw ConfigError("unknown preset '" + name + "'");
}

} // namespace qdsps::scenario
