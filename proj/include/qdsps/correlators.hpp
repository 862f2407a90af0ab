#pragma once

// Two-time correlation functions by the quantum regression theorem and the
// single-photon figures of merit built from them.

#include <iosfwd>
#include <string>
#include <vector>

#include "qdsps/evolver.hpp"

namespace qdsps::correlators {

using evolver::Trajectory;
using models::DissipatorKind;
using models::SystemModel;

// Common square window: t_i = i * spacing (i < n_outer), tau_j = j * spacing (j < n_tau).
struct TwoTimeGrid {
    double spacing{0.0};
    int n_outer{0};
    int n_tau{0};

    std::vector<double> outer_times() const;
    std::vector<double> tau_grid() const;
    double window() const { return spacing * (n_outer - 1); }
    bool operator==(const TwoTimeGrid&) const = default;

    // Spacing is the smallest multiple of the trajectory sample spacing giving
    // at most target_points outer samples over [0, t_end]; n_tau = n_outer.
    static TwoTimeGrid for_trajectory(const Trajectory& traj, int target_points = 400);
};

enum class SurfaceKind { G1, G2, MeanFieldProduct, G2pop };
std::string to_string(SurfaceKind kind);

struct CorrelationSurface {
    SurfaceKind kind{SurfaceKind::G1};
    TwoTimeGrid grid;
    Matrix values;  // (t index, tau index)
};

struct FiguresOfMerit {
    double n_a{0.0};
    double indist{0.0};
    double d1{0.0};
    double d2{0.0};
    double purcell{0.0};
};

struct RegressionOptions {
    // Pulse-region launches are stepped in fixed blocks of this many launches
    // (one task each); results do not depend on the thread count.
    int group_size{16};
    DissipatorKind kind{DissipatorKind::WeakFull};
    models::DissipatorOptions dissipator{};
};

// Plain RK4 propagation of Lambda under the master-equation generator taken at
// absolute time t_start + tau. tau_grid entries must be multiples of dt.
std::vector<Matrix> regression_propagate(const Matrix& lambda0, double t_start, const std::vector<double>& tau_grid,
                                         const SystemModel& model, DissipatorKind kind, double dt,
                                         const models::DissipatorOptions& opt = {});

struct RegressionSpec {
    Matrix left;
    Matrix right;
    Matrix readout;
};

// Generic surface Tr[readout Lambda_i(tau_j)] with Lambda_i(0) = left rho(t_i) right.
// Pulse-region launches are stepped in batches with the superoperator; once
// the generator is constant the readout is propagated backwards instead.
Matrix regression_surface(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                          const Matrix& left, const Matrix& right, const Matrix& readout,
                          const RegressionOptions& opt);
// Several surfaces sharing one pass over the pulse region.
std::vector<Matrix> regression_surfaces(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                                        const std::vector<RegressionSpec>& specs, const RegressionOptions& opt);

// G1(t, tau) = <a^dagger(t) a(t + tau)> = Tr[a Lambda(tau)], Lambda(0) = rho(t) a^dagger.
CorrelationSurface g1_surface(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                              const RegressionOptions& opt);
// G2(t, tau) = Tr[a^dagger a Lambda(tau)], Lambda(0) = a rho(t) a^dagger.
CorrelationSurface g2_surface(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                              const RegressionOptions& opt);

// <a^dagger a>(t_l) and <a>(t_l) for l = 0 .. n_outer + n_tau - 2, extending
// the trajectory past its end by further propagation.
struct SingleTimeSeries {
    std::vector<double> n_cav;
    std::vector<Complex> a_mean;
};
SingleTimeSeries extended_series(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                                 const RegressionOptions& opt);

// <a^dagger a>(t) <a^dagger a>(t + tau)
CorrelationSurface g2pop_surface(const SingleTimeSeries& s, const TwoTimeGrid& grid);
// <a(t + tau)> <a^dagger(t)>
CorrelationSurface mean_field_surface(const SingleTimeSeries& s, const TwoTimeGrid& grid);

// kappa * integral of <a^dagger a> by the trapezoid rule over the trajectory.
double emitted_photon_number(const Trajectory& traj, double kappa);

struct Indistinguishability {
    double indist{0.0};
    double d1{0.0};
    double d2{0.0};
};
// 2D trapezoid over the common window; throws std::invalid_argument when the
// surfaces live on different grids or have the wrong kinds.
Indistinguishability indistinguishability(const CorrelationSurface& g1, const CorrelationSurface& g2,
                                          const CorrelationSurface& g2pop, const CorrelationSurface& mean_field);

double purcell_factor(double g, double kappa, double gamma);
double timing_jitter_indistinguishability(double gamma_u, double gamma, double f_p);

struct Evaluation {
    FiguresOfMerit fom;
    TwoTimeGrid grid;
    CorrelationSurface g1, g2, g2pop, mean_field;
    std::vector<std::string> warnings;
};

// Full pipeline on a decayed trajectory: surfaces, N_a, I, D1, D2.
Evaluation evaluate(const Trajectory& traj, const SystemModel& model, const RegressionOptions& opt,
                    int outer_points = 400);

// Rows "t,tau,re,im".
void write_surface_csv(std::ostream& os, const CorrelationSurface& s);

} // namespace qdsps::correlators
