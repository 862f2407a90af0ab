#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qdsps/evolver.hpp"

using namespace qdsps;
using namespace qdsps::evolver;
using models::TwoLevelCavityModel;

namespace {

// Bare cavity plus a QD that never gets involved.
TwoLevelCavityModel bare(double kappa, double g = 0.0) {
    TwoLevelCavityModel m;
    m.g = g;
    m.kappa = kappa;
    m.gamma = 0.0;
    m.bath.alpha = 0.0;
    m.pulse.area_theta = 0.0;
    return m;
}

algebra::DensityMatrix basis(const SystemModel& sm, Index qd, Index n) {
    return algebra::DensityMatrix::basis_state(sm.space(), {qd, n});
}

Matrix random_density(Index n, std::mt19937& rng) {
    std::normal_distribution<double> d;
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) m(i, j) = Complex(d(rng), d(rng));
    Matrix rho = m * m.adjoint();
    return rho / rho.trace();
}

double rabi_final_n(double dt) {
    const SystemModel sm(bare(0.0, 1.0));
    const long steps = std::lround(10.0 / dt);
    const TimeGrid grid{0.0, 10.0, dt, static_cast<int>(steps)};
    IntegrateOptions opt;
    opt.record_states = false;
    return integrate(basis(sm, 1, 0), grid, sm, DissipatorKind::None, opt).observables.at("n_cav").back();
}

} // namespace

TEST(Rhs, CavityDecayRate) {
    const double kappa = 0.4;
    const SystemModel sm(bare(kappa));
    const Matrix rho = basis(sm, 0, 1).matrix();
    const Matrix d = rhs(rho, 0.0, sm, DissipatorKind::None);
    EXPECT_NEAR(algebra::expectation(sm.n_cav(), d).real(), -kappa, 1e-15);
}

TEST(Rhs, TracelessForRandomStates) {
    TwoLevelCavityModel m;
    m.pulse.area_theta = 6.0 * units::pi;
    m.delta_l = 0.8;
    const SystemModel sm(m);
    std::mt19937 rng(5);
    for (auto kind : {DissipatorKind::None, DissipatorKind::WeakFull, DissipatorKind::WeakSimplified,
                      DissipatorKind::Polaron}) {
        const Matrix rho = random_density(sm.dim(), rng);
        EXPECT_LT(std::abs(rhs(rho, m.pulse.center_time(), sm, kind).trace()), 1e-12);
    }
}

TEST(Rhs, UndrivenExcitonOnlyDecaysRadiatively) {
    TwoLevelCavityModel m;
    m.g = 0.0;
    m.pulse.area_theta = 0.0;
    const SystemModel sm(m);
    std::mt19937 rng(9);
    const Matrix rho = random_density(sm.dim(), rng);
    const double px = algebra::expectation(sm.coupling(), rho).real();
    const double dpx = algebra::expectation(sm.coupling(), rhs(rho, 0.0, sm, DissipatorKind::WeakFull)).real();
    EXPECT_NEAR(dpx, -m.gamma * px, 1e-6 * m.gamma);
}

TEST(Integrate, CavityDecayMatchesExponential) {
    const double kappa = 1.0;  // kappa dt = 0.01
    const SystemModel sm(bare(kappa));
    const TimeGrid grid{0.0, 10.0, 0.01, 10};
    const auto traj = integrate(basis(sm, 0, 1), grid, sm, DissipatorKind::None);
    const auto& n = traj.observables.at("n_cav");
    ASSERT_EQ(n.size(), traj.times.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) worst = std::max(worst, std::abs(n[i] - std::exp(-kappa * traj.times[i])));
    EXPECT_LT(worst, 1e-8);
}

TEST(Integrate, VacuumRabiOscillation) {
    const double g = 1.0;
    const SystemModel sm(bare(0.0, g));
    const TimeGrid grid{0.0, 10.0, 0.01, 5};
    const auto traj = integrate(basis(sm, 1, 0), grid, sm, DissipatorKind::None);
    const auto& n = traj.observables.at("n_cav");
    double worst = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        const double s = std::sin(g * traj.times[i]);
        worst = std::max(worst, std::abs(n[i] - s * s));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(IntegrateProperty, FourthOrderConvergence) {
    const double ref = rabi_final_n(0.2 / 8.0);
    const double e1 = std::abs(rabi_final_n(0.2) - ref);
    const double e2 = std::abs(rabi_final_n(0.1) - ref);
    const double ratio = e1 / e2;
    EXPECT_GT(ratio, 12.0);
    EXPECT_LT(ratio, 20.0);
}

TEST(Integrate, ResonantPiPulseInverts) {
    TwoLevelCavityModel m;
    m.g = 0.0;
    m.gamma = 0.0;
    m.bath.alpha = 0.0;
    const SystemModel sm(m);
    const TimeGrid grid{0.0, m.pulse.end_time(), 0.01, 10};
    const auto traj = integrate(basis(sm, 0, 0), grid, sm, DissipatorKind::None);
    EXPECT_NEAR(traj.observables.at("x").back(), 1.0, 1e-4);
}

TEST(Integrate, ConstantTailMatchesStagewiseRk4) {
    const SystemModel sm(TwoLevelCavityModel{});
    const TimeGrid grid{0.0, 40.0, 0.01, 10};
    IntegrateOptions fast, slow;
    slow.constant_tail = false;
    const auto a = integrate(basis(sm, 0, 0), grid, sm, DissipatorKind::WeakFull, fast);
    const auto b = integrate(basis(sm, 0, 0), grid, sm, DissipatorKind::WeakFull, slow);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.states.size(); ++i)
        worst = std::max(worst, (a.states[i] - b.states[i]).cwiseAbs().maxCoeff());
    EXPECT_LT(worst, 1e-12);
}

TEST(TimeGrid, Validation) {
    EXPECT_THROW((TimeGrid{0.0, 1.0, 0.0, 1}.validate()), std::invalid_argument);
    EXPECT_THROW((TimeGrid{0.0, 1.0, 0.01, 0}.validate()), std::invalid_argument);
    EXPECT_THROW((TimeGrid{0.0, 1.005, 0.01, 1}.validate()), std::invalid_argument);
    EXPECT_EQ((TimeGrid{0.0, 1.0, 0.01, 1}.steps()), 100);
}

TEST(RunUntilDecayed, CavityStopsAtThreshold) {
    const double kappa = units::ueV_to_rad_per_ps(50.0);
    const SystemModel sm(bare(kappa));
    const auto traj = run_until_decayed(basis(sm, 0, 1), sm, DissipatorKind::None);
    const double expected = std::log(1e6) / kappa;  // about 180 ps
    EXPECT_TRUE(traj.decayed);
    EXPECT_GE(traj.t_end(), expected);
    EXPECT_LE(traj.t_end(), expected + traj.sample_spacing() + 1e-9);
    EXPECT_NEAR(traj.t_end(), 180.0, 3.0);
}

TEST(RunUntilDecayed, NothingToDecayStopsAfterPulse) {
    const SystemModel sm(bare(units::ueV_to_rad_per_ps(50.0)));
    const auto traj = run_until_decayed(basis(sm, 0, 0), sm, DissipatorKind::None);
    EXPECT_TRUE(traj.decayed);
    EXPECT_LE(traj.t_end(), sm.pulse().end_time() + traj.sample_spacing() + 1e-9);
}

TEST(RunUntilDecayed, TimeLimitWarns) {
    const SystemModel sm(bare(units::ueV_to_rad_per_ps(50.0)));
    DecayOptions opt;
    opt.t_max = 40.0;
    const auto traj = run_until_decayed(basis(sm, 0, 1), sm, DissipatorKind::None, opt);
    EXPECT_FALSE(traj.decayed);
    EXPECT_FALSE(traj.warnings.empty());
    EXPECT_NEAR(traj.t_end(), 40.0, 1e-9);
}

TEST(RunUntilDecayedProperty, ResonantDefaultsDecayCleanly) {
    const SystemModel sm(TwoLevelCavityModel{});
    DecayOptions opt;
    opt.integrate.record_states = false;
    const auto traj = run_until_decayed(basis(sm, 0, 0), sm, DissipatorKind::WeakFull, opt);
    EXPECT_TRUE(traj.decayed);
    EXPECT_LT(traj.t_end(), 2000.0);
    EXPECT_LT(traj.max_trace_error, 1e-8);
    EXPECT_LT(traj.max_hermiticity_error, 1e-10);
    EXPECT_TRUE(traj.warnings.empty());
}

TEST(RunUntilDecayedProperty, BiexcitonDecaysCleanly) {
    models::BiexcitonModel m;
    m.pulse.tau_p = units::tau_p_from_fwhm(7.3);
    m.pulse.area_theta = 4.5 * units::pi;
    const SystemModel sm(m);
    DecayOptions opt;
    opt.integrate.record_states = false;
    const auto traj = run_until_decayed(basis(sm, 0, 0), sm, DissipatorKind::WeakFull, opt);
    EXPECT_TRUE(traj.decayed);
    EXPECT_LT(traj.max_trace_error, 1e-8);
    EXPECT_LT(traj.max_hermiticity_error, 1e-10);
}

TEST(IntegrateProperty, Deterministic) {
    TwoLevelCavityModel m;
    m.delta_l = units::ueV_to_rad_per_ps(750.0);
    m.pulse.tau_p = 4.0;
    m.pulse.area_theta = 8.0 * units::pi;
    const SystemModel sm(m);
    const TimeGrid grid{0.0, 60.0, 0.01, 10};
    const auto a = integrate(basis(sm, 0, 0), grid, sm, DissipatorKind::WeakFull);
    const auto b = integrate(basis(sm, 0, 0), grid, sm, DissipatorKind::WeakFull);
    ASSERT_EQ(a.states.size(), b.states.size());
    for (std::size_t i = 0; i < a.states.size(); ++i) EXPECT_TRUE(a.states[i] == b.states[i]);
    EXPECT_EQ(a.observables, b.observables);
}

TEST(Stability, NumberScalesWithDt) {
    const SystemModel sm(TwoLevelCavityModel{});
    EXPECT_NEAR(stability_number(sm, 0.02), 2.0 * stability_number(sm, 0.01), 1e-15);
    EXPECT_LT(stability_number(sm, 0.01), 0.05);
}

TEST(DefaultTimeLimit, UsesEmissionRate) {
    const SystemModel sm(TwoLevelCavityModel{});
    EXPECT_NEAR(default_t_max(sm), sm.pulse().center_time() + 20.0 / sm.emission_rate(), 1e-9);
    EXPECT_NEAR(sm.emission_rate(), sm.gamma() * (1.0 + sm.purcell()), 1e-12);
}
