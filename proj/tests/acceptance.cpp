// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "qdsps/scenario.hpp"

using namespace qdsps;
namespace sc = qdsps::scenario;
using models::DissipatorKind;

namespace {

struct Outcome {
    bool pass{false};
    std::string detail;
};

sc::RunContext no_files() {
    sc::RunContext ctx;
    ctx.write_files = false;
    return ctx;
}

sc::ScenarioConfig preset(const std::string& name) { return sc::parse_config(sc::preset_text(name)); }

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol; }

Outcome criterion1() {
    const auto r = sc::run_scenario(preset("fig2-resonant"), no_files());
    if (!r.ok() || !r.fom) return {false, "run failed: " + r.error};
    const bool ok = r.n_a >= 0.88 && r.fom->indist >= 0.94;
    return {ok, fmt::format("N_a = {:.4f} (>= 0.88), I = {:.4f} (>= 0.94), {:.1f} s", r.n_a, r.fom->indist,
                            r.wall_clock_s)};
}

Outcome optimised_offres(const std::string& name, double na_target, double na_tol,
                         const std::function<bool(double)>& indist_ok, const std::string& indist_rule) {
    const auto res = sc::optimize_area(preset(name), no_files());
    const auto& r = res.record;
    if (!r.ok() || !r.fom) return {false, "run failed: " + r.error};
    const bool ok = within(r.n_a, na_target, na_tol) && indist_ok(r.fom->indist);
    return {ok, fmt::format("theta_opt = {:.2f} pi, N_a = {:.4f} ({} +- {}), I = {:.4f} ({})", res.theta_opt / units::pi,
                            r.n_a, na_target, na_tol, r.fom->indist, indist_rule)};
}

Outcome criterion2() {
    return optimised_offres("offres-short", 0.71, 0.05, [](double i) { return within(i, 0.99, 0.01); }, "0.99 +- 0.01");
}

Outcome criterion3() {
    return optimised_offres("offres-long", 0.90, 0.05, [](double i) { return i >= 0.97; }, ">= 0.97");
}

Outcome criterion4() {
    const auto res = sc::optimize_tpe_area(preset("fig5-tpe"), no_files());
    const auto& r = res.record;
    if (!r.ok() || !r.fom) return {false, "run failed: " + r.error};
    const bool ok = within(r.fom->d1, 0.02, 0.01) && r.fom->d2 <= 1e-3;
    return {ok, fmt::format("theta_opt = {:.2f} pi, D1 = {:.4f} (0.02 +- 0.01), D2 = {:.2e} (<= 1e-3), N_a = {:.4f}",
                            res.theta_opt / units::pi, r.fom->d1, r.fom->d2, r.n_a)};
}

std::size_t label_index(const sc::DissipatorComparison& c, DissipatorKind k) {
    for (std::size_t i = 0; i < c.labels.size(); ++i)
        if (c.labels[i] == models::to_string(k)) return i;
    throw std::runtime_error("missing dissipator " + models::to_string(k));
}

Outcome criterion5() {
    const double b = phonon::b_average(phonon::PhononParams{});
    const auto cmp = sc::compare_dissipators(preset("figA1-polaron-compare"), no_files());
    const std::size_t w = label_index(cmp, DissipatorKind::WeakFull), p = label_index(cmp, DissipatorKind::Polaron);
    double diff = 0.0;
    for (std::size_t k = 0; k < cmp.times.size(); ++k) diff = std::max(diff, std::abs(cmp.emitter[w][k] - cmp.emitter[p][k]));
    const bool ok = within(b, 0.96, 0.01) && diff <= 0.02;
    return {ok, fmt::format("<B> = {:.4f} (0.96 +- 0.01), max |x_weak - x_polaron| = {:.4f} (<= 0.02) over {} samples", b,
                            diff, cmp.times.size())};
}

Outcome criterion6() {
    const auto cfg = preset("figB1-simplified-compare");
    const auto cmp = sc::compare_dissipators(cfg, no_files());
    const std::size_t f = label_index(cmp, DissipatorKind::WeakFull), s = label_index(cmp, DissipatorKind::WeakSimplified);
    const double window = cfg.pulse.center_time() + 2.0 * cfg.pulse.tau_p;
    double diff = 0.0;
    for (std::size_t k = 0; k < cmp.times.size() && cmp.times[k] <= window + 1e-9; ++k) {
        diff = std::max(diff, std::abs(cmp.emitter[f][k] - cmp.emitter[s][k]));
        diff = std::max(diff, std::abs(cmp.n_cav[f][k] - cmp.n_cav[s][k]));
    }
    return {diff <= 0.01, fmt::format("max population difference on [0, {:.0f} ps] = {:.2e} (<= 0.01)", window, diff)};
}

Outcome criterion7() {
    models::TwoLevelCavityModel m;
    m.pulse.area_theta = 18.0 * units::pi;
    m.pulse.tau_p = 4.0;
    m.delta_l = units::ueV_to_rad_per_ps(750.0);
    const models::SystemModel sm(m);
    const double c = m.pulse.center_time();
    const double at = models::gamma_plus_at(c, sm);
    const double h = 0.01;
    const bool local_min = at < models::gamma_plus_at(c - h, sm) && at < models::gamma_plus_at(c + h, sm);
    const double side = std::min(models::gamma_plus_at(c - m.pulse.tau_p, sm), models::gamma_plus_at(c + m.pulse.tau_p, sm));
    return {local_min && at < side,
            fmt::format("Gamma+(c) = {:.3e}, Gamma+(c +- 0.01 ps) = {:.3e} / {:.3e}, Gamma+(c +- tau_p) >= {:.3e} ps^-1", at,
                        models::gamma_plus_at(c - h, sm), models::gamma_plus_at(c + h, sm), side)};
}

// Property suite; every entry is an independent check.
Outcome criterion8() {
    std::vector<std::string> failed;
    auto require = [&](bool ok, const std::string& what) {
        if (!ok) failed.push_back(what);
    };

    // Trace and Hermiticity drift on the resonant preset and the TPE model.
    {
        const auto r = sc::run_scenario(preset("fig2-resonant"), no_files());
        require(r.max_trace_error < 1e-8, fmt::format("trace drift {:.1e}", r.max_trace_error));
        require(r.max_hermiticity_error < 1e-10, fmt::format("hermiticity drift {:.1e}", r.max_hermiticity_error));
        auto tpe = preset("fig5-tpe");
        tpe.optimize.reset();
        tpe.pulse.area_theta = 4.5 * units::pi;
        tpe.sweep.population_only = true;
        const auto rt = sc::run_scenario(tpe, no_files());
        require(rt.max_trace_error < 1e-8, fmt::format("biexciton trace drift {:.1e}", rt.max_trace_error));
        require(rt.max_hermiticity_error < 1e-10, fmt::format("biexciton hermiticity drift {:.1e}", rt.max_hermiticity_error));
    }

    // RK4 order on the vacuum Rabi oscillation.
    {
        models::TwoLevelCavityModel m;
        m.g = 1.0;
        m.kappa = m.gamma = 0.0;
        m.bath.alpha = 0.0;
        m.pulse.area_theta = 0.0;
        const models::SystemModel sm(m);
        const auto rho0 = algebra::DensityMatrix::basis_state(sm.space(), {1, 0});
        auto final_n = [&](double dt) {
            const int steps = static_cast<int>(std::lround(10.0 / dt));
            evolver::IntegrateOptions o;
            o.record_states = false;
            return evolver::integrate(rho0, {0.0, 10.0, dt, steps}, sm, DissipatorKind::None, o).observables.at("n_cav").back();
        };
        const double ref = final_n(0.025);
        const double order = std::log2(std::abs(final_n(0.2) - ref) / std::abs(final_n(0.1) - ref));
        require(order > 3.6 && order < 4.4, fmt::format("RK4 order {:.2f}", order));
    }

    // Ideal damped-cavity single photon and the zero-delay regression check.
    {
        models::TwoLevelCavityModel m;
        m.g = 0.0;
        m.gamma = 0.0;
        m.bath.alpha = 0.0;
        m.pulse.area_theta = 0.0;
        const models::SystemModel sm(m);
        const auto traj = evolver::run_until_decayed(algebra::DensityMatrix::basis_state(sm.space(), {0, 1}), sm,
                                                     DissipatorKind::None);
        correlators::RegressionOptions ro;
        ro.kind = DissipatorKind::None;
        const auto ev = correlators::evaluate(traj, sm, ro);
        require(within(ev.fom.n_a, 1.0, 1e-3), fmt::format("ideal N_a {:.5f}", ev.fom.n_a));
        require(within(ev.fom.indist, 1.0, 1e-3), fmt::format("ideal I {:.5f}", ev.fom.indist));

        const models::SystemModel res{models::TwoLevelCavityModel{}};
        const auto tr = evolver::run_until_decayed(algebra::DensityMatrix::basis_state(res.space(), {0, 0}), res,
                                                   DissipatorKind::WeakFull);
        const auto grid = correlators::TwoTimeGrid::for_trajectory(tr, 400);
        const auto g2 = correlators::g2_surface(tr, grid, res, correlators::RegressionOptions{});
        const Matrix ad = res.a().adjoint();
        const Matrix moment = ad * ad * res.a() * res.a();
        const auto stride = static_cast<std::size_t>(std::lround(grid.spacing / tr.sample_spacing()));
        double worst = 0.0;
        for (int i = 0; i < grid.n_outer; ++i)
            worst = std::max(worst, std::abs(g2.values(i, 0) - algebra::expectation(moment, tr.states[i * stride])));
        require(worst < 1e-8, fmt::format("G2(t,0) mismatch {:.1e}", worst));
    }

    // Closed forms against Gauss-Kronrod quadrature, and detailed balance.
    {
        using boost::math::quadrature::gauss_kronrod;
        const double inf = std::numeric_limits<double>::infinity();
        double worst_dp = 0.0, worst_ge = 0.0, worst_k = 0.0, worst_db = 0.0;
        for (double wb_meV : {0.5, 1.0, 2.0}) {
            for (double temperature : {2.0, 4.0, 20.0}) {
                phonon::PhononParams p;
                p.omega_b = units::meV_to_rad_per_ps(wb_meV);
                p.temperature = temperature;
                const double beta = units::hbar_over_kT(temperature);
                auto j = [&](double w) { return p.alpha * w * w * w * std::exp(-w * w / (2 * p.omega_b * p.omega_b)); };
                auto coth = [&](double w) { return 1.0 / std::tanh(0.5 * beta * w); };

                const double dp = gauss_kronrod<double, 61>::integrate([&](double w) { return w > 0 ? j(w) / w : 0.0; },
                                                                       0.0, inf, 15, 1e-13);
                worst_dp = std::max(worst_dp, std::abs(phonon::polaron_shift(p) / dp - 1.0));

                const phonon::PhononBath bath(p);
                const double w = 0.8 * p.omega_b, d = 0.5 * p.omega_b, wr = std::hypot(w, d);
                const double via_rc = 4.0 * (w / wr) * (w / wr) * bath.r_c(wr).real();
                worst_ge = std::max(worst_ge, std::abs(phonon::gamma_eff(w, d, p) / via_rc - 1.0));

                for (double x : {-1.7, -1.0, 1.0, 1.7}) {
                    const double delta = x * p.omega_b;
                    const double closed = 0.5 * units::pi * j(std::abs(delta)) * (coth(std::abs(delta)) - (x > 0 ? 1.0 : -1.0));
                    worst_k = std::max(worst_k, std::abs(bath.half_fourier(delta).real() / closed - 1.0));
                }
                if (temperature == 4.0) {
                    for (double delta : {0.3, 0.8, 1.5}) {
                        const double ratio = bath.half_fourier(-delta).real() / bath.half_fourier(delta).real();
                        worst_db = std::max(worst_db, std::abs(ratio / std::exp(beta * delta) - 1.0));
                    }
                }
            }
        }
        require(worst_dp < 1e-4, fmt::format("Delta_P rel err {:.1e}", worst_dp));
        require(worst_ge < 1e-4, fmt::format("gamma_eff rel err {:.1e}", worst_ge));
        require(worst_k < 1e-4, fmt::format("Re K rel err {:.1e}", worst_k));
        require(worst_db < 1e-3, fmt::format("detailed balance rel err {:.1e}", worst_db));
    }

    // Timing-jitter limits.
    {
        const double g = 1.0;
        require(within(correlators::timing_jitter_indistinguishability(2 * g, g, 1e12), 1.0, 1e-9), "F_P -> inf limit");
        require(within(correlators::timing_jitter_indistinguishability(2 * g, g, 0.0), 5.0 / 6.0, 1e-14), "F_P = 0 limit");
    }

    if (failed.empty()) return {true, "trace, hermiticity, RK4 order, ideal photon, G2(t,0), quadrature oracles, "
                                      "detailed balance, timing-jitter limits"};
    std::string d = "failed:";
    for (const auto& f : failed) d += " [" + f + "]";
    return {false, d};
}

} // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"resonant pi pulse", criterion1},
        {"phonon-assisted, 1 meV, tau_p 6 ps", criterion2},
        {"phonon-assisted, long pulse", criterion3},
        {"two-photon biexciton", criterion4},
        {"polaron cross-check", criterion5},
        {"simplified vs full dissipator", criterion6},
        {"Gamma+ dip", criterion7},
        {"property suite", criterion8},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("criterion %zu %s: %s  %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
