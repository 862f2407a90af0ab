#include "qdsps/correlators.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <tbb/parallel_for.h>

namespace qdsps::correlators {

std::vector<double> TwoTimeGrid::outer_times() const {
    std::vector<double> t(static_cast<std::size_t>(n_outer));
    for (int i = 0; i < n_outer; ++i) t[static_cast<std::size_t>(i)] = i * spacing;
    return t;
}

std::vector<double> TwoTimeGrid::tau_grid() const {
    std::vector<double> t(static_cast<std::size_t>(n_tau));
    for (int j = 0; j < n_tau; ++j) t[static_cast<std::size_t>(j)] = j * spacing;
    return t;
}

TwoTimeGrid TwoTimeGrid::for_trajectory(const Trajectory& traj, int target_points) {
    if (target_points < 2) throw std::invalid_argument("TwoTimeGrid: need at least two outer points");
    if (traj.times.size() < 2) throw std::invalid_argument("TwoTimeGrid: trajectory has fewer than two samples");
    const double ss = traj.sample_spacing();
    const long n_samples = std::lround((traj.t_end() - traj.times.front()) / ss);
    const long factor = std::max<long>(1, (n_samples + target_points - 2) / (target_points - 1));
    TwoTimeGrid g;
    g.spacing = static_cast<double>(factor) * ss;
    g.n_outer = static_cast<int>(n_samples / factor) + 1;
    g.n_tau = g.n_outer;
    return g;
}

std::string to_string(SurfaceKind kind) {
    switch (kind) {
    case SurfaceKind::G1: return "G1";
    case SurfaceKind::G2: return "G2";
    case SurfaceKind::MeanFieldProduct: return "mean_field";
    case SurfaceKind::G2pop: return "G2pop";
    }
    return "unknown";
}

namespace {

Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

// Tr[A X] = vec(A^T) . vec(X) as a row vector.
Eigen::RowVectorXcd readout_row(const Matrix& a) {
    const Matrix at = a.transpose();
    return Eigen::Map<const Eigen::RowVectorXcd>(at.data(), at.size());
}

long steps_per(double spacing, double dt) {
    const double r = spacing / dt;
    const long n = std::lround(r);
    if (n < 1 || std::abs(r - static_cast<double>(n)) > 1e-9 * r)
        throw std::invalid_argument("grid spacing is not a multiple of the integrator step");
    return n;
}

struct GridContext {
    const Trajectory& traj;
    const TwoTimeGrid& grid;
    const SystemModel& model;
    const RegressionOptions& opt;
    double dt;
    long m;        // integrator steps per grid spacing
    long ratio;    // trajectory samples per grid spacing
    long k_c;      // first grid index from which the generator is constant
    Matrix p_grid; // RK4 step matrix over one grid spacing, constant region

    GridContext(const Trajectory& t, const TwoTimeGrid& g, const SystemModel& mo, const RegressionOptions& o)
        : traj(t), grid(g), model(mo), opt(o), dt(t.dt) {
        if (!(g.spacing > 0.0) || g.n_outer < 1 || g.n_tau < 1) throw std::invalid_argument("invalid TwoTimeGrid");
        m = steps_per(g.spacing, dt);
        ratio = steps_per(g.spacing, t.sample_spacing());
        if (traj.states.size() < static_cast<std::size_t>((g.n_outer - 1) * ratio + 1))
            throw std::invalid_argument("trajectory does not hold states over the outer grid");
        evolver::Stepper st(model, opt.kind, dt, 0.0, opt.dissipator);
        k_c = (st.constant_from() + m - 1) / m;
        p_grid = st.constant_step_power(m);
    }

    const Matrix& state(long i) const { return traj.states[static_cast<std::size_t>(i * ratio)]; }

    Matrix superop(double t) const { return model.generator(t, opt.kind, opt.dissipator).superoperator(); }

    // Rows w_j = w_0 P^j for j < rows.
    Eigen::MatrixXcd readouts(const Matrix& a, int rows) const {
        Eigen::MatrixXcd w(rows, a.size());
        w.row(0) = readout_row(a);
        for (int j = 1; j < rows; ++j) w.row(j) = w.row(j - 1) * p_grid;
        return w;
    }

    // Batched RK4 of columns launched at grid indices first..first+count-1 up to
    // grid index k_c; launch(i, c) returns the column(s) for launch i, `width`
    // columns per launch. on_grid(l, X) is called at every grid time with the
    // active columns. Stages run over fixed column blocks in parallel, so the
    // result does not depend on the number of threads.
    template <typename Launch, typename OnGrid>
    void propagate(long first, long count, long width, Launch&& launch, OnGrid&& on_grid) const {
        const Index d2 = model.dim() * model.dim();
        Matrix x = Matrix::Zero(d2, count * width);
        long active = 0;
        const double h = dt;
        const long block = std::max(1, opt.group_size) * width;
        Matrix l1 = superop(static_cast<double>(first * m) * dt);
        for (long s = first * m;; ++s) {
            if (s % m == 0) {
                const long l = s / m;
                while (active < count && first + active == l) {
                    x.middleCols(active * width, width) = launch(first + active);
                    ++active;
                }
                on_grid(l, x.leftCols(active * width));
                if (l >= k_c) return;
            }
            const Matrix l2 = superop((static_cast<double>(s) + 0.5) * dt);
            Matrix l3 = superop(static_cast<double>(s + 1) * dt);
            const long cols = active * width;
            const long n_blocks = (cols + block - 1) / block;
            tbb::parallel_for(0L, n_blocks, [&](long b) {
                const long c0 = b * block;
                auto xa = x.middleCols(c0, std::min(block, cols - c0));
                const Matrix k1 = l1 * xa;
                const Matrix k2 = l2 * (xa + 0.5 * h * k1);
                const Matrix k3 = l2 * (xa + 0.5 * h * k2);
                const Matrix k4 = l3 * (xa + h * k3);
                xa += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            });
            l1 = std::move(l3);
        }
    }
};

} // namespace

std::vector<Matrix> regression_propagate(const Matrix& lambda0, double t_start, const std::vector<double>& tau_grid,
                                         const SystemModel& model, DissipatorKind kind, double dt,
                                         const models::DissipatorOptions& opt) {
    if (lambda0.rows() != model.dim() || lambda0.cols() != model.dim())
        throw std::invalid_argument("regression_propagate: Lambda0 dimension does not match the model");
    evolver::Stepper st(model, kind, dt, t_start, opt);
    std::vector<Matrix> out;
    out.reserve(tau_grid.size());
    Matrix lam = lambda0;
    long k = 0;
    for (double tau : tau_grid) {
        const long target = std::lround(tau / dt);
        if (target < k || std::abs(tau - static_cast<double>(target) * dt) > 1e-9 * std::max(1.0, tau))
            throw std::invalid_argument("regression_propagate: tau grid must be ascending multiples of dt");
        while (k < target) {
            st.step(lam, k);
            ++k;
            const Complex tr = lam.trace();
            if (!std::isfinite(tr.real()) || !std::isfinite(tr.imag()))
                throw EngineError("NaN encountered in regression propagation");
        }
        out.push_back(lam);
    }
    return out;
}

std::vector<Matrix> regression_surfaces(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                                        const std::vector<RegressionSpec>& specs, const RegressionOptions& opt) {
    const GridContext ctx(traj, grid, model, opt);
    const long ns = static_cast<long>(specs.size());
    const Index d2 = model.dim() * model.dim();
    std::vector<Eigen::MatrixXcd> w;
    std::vector<Matrix> g;
    for (const auto& sp : specs) {
        w.push_back(ctx.readouts(sp.readout, grid.n_tau));
        g.push_back(Matrix::Zero(grid.n_outer, grid.n_tau));
    }
    auto launch = [&](long i) -> Matrix {
        Matrix cols(d2, ns);
        for (long q = 0; q < ns; ++q) cols.col(q) = vec(specs[q].left * ctx.state(i) * specs[q].right);
        return cols;
    };

    // Launches in the constant region: G(i, j) = w_j . vec(Lambda_i).
    const long first_const = std::min<long>(ctx.k_c, grid.n_outer);
    if (first_const < grid.n_outer) {
        const long count = grid.n_outer - first_const;
        for (long q = 0; q < ns; ++q) {
            Matrix lam(d2, count);
            for (long c = 0; c < count; ++c)
                lam.col(c) = vec(specs[q].left * ctx.state(first_const + c) * specs[q].right);
            g[q].bottomRows(count) = (w[q] * lam).transpose();
        }
    }

    // Pulse-region launches, all stepped through one shared time loop.
    const long n_pulse = first_const;
    if (n_pulse > 0) {
        ctx.propagate(0, n_pulse, ns, launch, [&](long l, const auto& x) {
            for (long c = 0; c < x.cols(); ++c) {
                const long i = c / ns;
                const long q = c % ns;
                const long off = l - i;
                if (off >= grid.n_tau) continue;
                if (l < ctx.k_c) {
                    g[q](i, off) = (w[q].row(0) * x.col(c))(0, 0);
                    continue;
                }
                // Tail from the constant region onwards.
                g[q].row(i).segment(off, grid.n_tau - off) =
                    (w[q].topRows(grid.n_tau - off) * x.col(c)).transpose();
            }
        });
    }
    return g;
}

Matrix regression_surface(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                          const Matrix& left, const Matrix& right, const Matrix& readout,
                          const RegressionOptions& opt) {
    return regression_surfaces(traj, grid, model, {{left, right, readout}}, opt).front();
}

CorrelationSurface g1_surface(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                              const RegressionOptions& opt) {
    const Matrix id = Matrix::Identity(model.dim(), model.dim());
    return {SurfaceKind::G1, grid, regression_surface(traj, grid, model, id, model.a().adjoint(), model.a(), opt)};
}

CorrelationSurface g2_surface(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                              const RegressionOptions& opt) {
    const Matrix& a = model.a();
    return {SurfaceKind::G2, grid, regression_surface(traj, grid, model, a, a.adjoint(), model.n_cav(), opt)};
}

SingleTimeSeries extended_series(const Trajectory& traj, const TwoTimeGrid& grid, const SystemModel& model,
                                 const RegressionOptions& opt) {
    const GridContext ctx(traj, grid, model, opt);
    const long total = grid.n_outer + grid.n_tau - 1;
    SingleTimeSeries s;
    s.n_cav.resize(static_cast<std::size_t>(total));
    s.a_mean.resize(static_cast<std::size_t>(total));
    for (long l = 0; l < grid.n_outer; ++l) {
        const Matrix& rho = ctx.state(l);
        s.n_cav[static_cast<std::size_t>(l)] = algebra::expectation(model.n_cav(), rho).real();
        s.a_mean[static_cast<std::size_t>(l)] = algebra::expectation(model.a(), rho);
    }
    const long l0 = grid.n_outer - 1;
    const Eigen::MatrixXcd wn = ctx.readouts(model.n_cav(), grid.n_tau);
    const Eigen::MatrixXcd wa = ctx.readouts(model.a(), grid.n_tau);
    auto fill_from = [&](long base, const Vector& v) {
        for (long l = std::max(base, l0 + 1); l < total; ++l) {
            const long j = l - base;
            s.n_cav[static_cast<std::size_t>(l)] = (wn.row(j) * v)(0, 0).real();
            s.a_mean[static_cast<std::size_t>(l)] = (wa.row(j) * v)(0, 0);
        }
    };
    if (l0 >= ctx.k_c) {
        fill_from(l0, vec(ctx.state(l0)));
        return s;
    }
    // Window ends inside the pulse: propagate the state itself to the constant region.
    ctx.propagate(l0, 1, 1, [&](long) -> Matrix { return vec(ctx.state(l0)); }, [&](long l, const auto& x) {
        const Vector col = x.col(0);
        const Matrix rho = Eigen::Map<const Matrix>(col.data(), model.dim(), model.dim());
        if (l < ctx.k_c) {
            if (l > l0 && l < total) {
                s.n_cav[static_cast<std::size_t>(l)] = algebra::expectation(model.n_cav(), rho).real();
                s.a_mean[static_cast<std::size_t>(l)] = algebra::expectation(model.a(), rho);
            }
            return;
        }
        fill_from(l, col);
    });
    return s;
}

CorrelationSurface g2pop_surface(const SingleTimeSeries& s, const TwoTimeGrid& grid) {
    Matrix v(grid.n_outer, grid.n_tau);
    for (int i = 0; i < grid.n_outer; ++i)
        for (int j = 0; j < grid.n_tau; ++j)
            v(i, j) = s.n_cav.at(static_cast<std::size_t>(i)) * s.n_cav.at(static_cast<std::size_t>(i + j));
    return {SurfaceKind::G2pop, grid, std::move(v)};
}

CorrelationSurface mean_field_surface(const SingleTimeSeries& s, const TwoTimeGrid& grid) {
    Matrix v(grid.n_outer, grid.n_tau);
    for (int i = 0; i < grid.n_outer; ++i)
        for (int j = 0; j < grid.n_tau; ++j)
            v(i, j) = s.a_mean.at(static_cast<std::size_t>(i + j)) * std::conj(s.a_mean.at(static_cast<std::size_t>(i)));
    return {SurfaceKind::MeanFieldProduct, grid, std::move(v)};
}

double emitted_photon_number(const Trajectory& traj, double kappa) {
    const auto it = traj.observables.find("n_cav");
    if (it == traj.observables.end() || traj.times.size() < 2) return 0.0;
    if (!traj.decayed) spdlog::warn("emitted_photon_number: trajectory has not decayed");
    const auto& n = it->second;
    double sum = 0.0;
    for (std::size_t k = 1; k < n.size(); ++k) sum += 0.5 * (n[k] + n[k - 1]) * (traj.times[k] - traj.times[k - 1]);
    return kappa * sum;
}

Indistinguishability indistinguishability(const CorrelationSurface& g1, const CorrelationSurface& g2,
                                          const CorrelationSurface& g2pop, const CorrelationSurface& mean_field) {
    if (g1.kind != SurfaceKind::G1 || g2.kind != SurfaceKind::G2 || g2pop.kind != SurfaceKind::G2pop ||
        mean_field.kind != SurfaceKind::MeanFieldProduct)
        throw std::invalid_argument("indistinguishability: surfaces passed in the wrong order");
    const TwoTimeGrid& grid = g1.grid;
    if (!(g2.grid == grid) || !(g2pop.grid == grid) || !(mean_field.grid == grid))
        throw std::invalid_argument("indistinguishability: surfaces are on different grids");
    for (const auto* s : {&g1, &g2, &g2pop, &mean_field})
        if (s->values.rows() != grid.n_outer || s->values.cols() != grid.n_tau)
            throw std::invalid_argument("indistinguishability: surface shape does not match its grid");

    auto weight = [](int i, int n) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; };
    double num1 = 0.0, num2 = 0.0, den = 0.0;
    for (int i = 0; i < grid.n_outer; ++i)
        for (int j = 0; j < grid.n_tau; ++j) {
            const double w = weight(i, grid.n_outer) * weight(j, grid.n_tau);
            const double pop = g2pop.values(i, j).real();
            num1 += w * (pop - std::norm(g1.values(i, j)));
            num2 += w * g2.values(i, j).real();
            den += w * (2.0 * pop - std::norm(mean_field.values(i, j)));
        }
    if (!(den > 0.0)) throw EngineError("indistinguishability: vanishing normalisation (no emission in the window)");
    Indistinguishability out;
    out.d1 = num1 / den;
    out.d2 = num2 / den;
    out.indist = 1.0 - out.d1 - out.d2;
    return out;
}

double purcell_factor(double g, double kappa, double gamma) {
    if (!(kappa > 0.0) || !(gamma > 0.0) || g < 0.0)
        throw std::invalid_argument("purcell_factor: kappa and gamma must be > 0, g >= 0");
    return 4.0 * g * g / (kappa * gamma);
}

double timing_jitter_indistinguishability(double gamma_u, double gamma, double f_p) {
    if (gamma_u < 0.0 || gamma < 0.0 || f_p < 0.0)
        throw std::invalid_argument("timing_jitter_indistinguishability: negative argument");
    if (std::isinf(f_p)) return 1.0;
    const double upper = gamma_u * (1.0 + f_p / 2.0);
    if (upper + gamma == 0.0) throw std::invalid_argument("timing_jitter_indistinguishability: all rates vanish");
    return 0.5 * (1.0 + upper / (upper + gamma));
}

Evaluation evaluate(const Trajectory& traj, const SystemModel& model, const RegressionOptions& opt, int outer_points) {
    Evaluation ev;
    ev.warnings = traj.warnings;
    ev.grid = TwoTimeGrid::for_trajectory(traj, outer_points);
    const Matrix& a = model.a();
    const Matrix id = Matrix::Identity(model.dim(), model.dim());
    auto both = regression_surfaces(traj, ev.grid, model, {{id, a.adjoint(), a}, {a, a.adjoint(), model.n_cav()}}, opt);
    ev.g1 = {SurfaceKind::G1, ev.grid, std::move(both[0])};
    ev.g2 = {SurfaceKind::G2, ev.grid, std::move(both[1])};
    const SingleTimeSeries s = extended_series(traj, ev.grid, model, opt);
    ev.g2pop = g2pop_surface(s, ev.grid);
    ev.mean_field = mean_field_surface(s, ev.grid);
    const Indistinguishability ind = indistinguishability(ev.g1, ev.g2, ev.g2pop, ev.mean_field);
    ev.fom.n_a = emitted_photon_number(traj, model.kappa());
    ev.fom.indist = ind.indist;
    ev.fom.d1 = ind.d1;
    ev.fom.d2 = ind.d2;
    ev.fom.purcell = model.purcell();

    for (const auto* surf : {&ev.g1, &ev.g2}) {
        const double peak = surf->values.cwiseAbs().maxCoeff();
        const double edge = surf->values.col(ev.grid.n_tau - 1).cwiseAbs().maxCoeff();
        if (peak > 0.0 && edge > 1e-4 * peak) {
            // Expected at the default population threshold; the missing tail
            // changes the integrals by far less than the ratio itself.
            const std::string w = fmt::format("{} tail at tau_max is {:.2e} of its peak (above 1e-4)",
                                              to_string(surf->kind), edge / peak);
            spdlog::info("{}", w);
            ev.warnings.push_back(w);
        }
    }
    return ev;
}

void write_surface_csv(std::ostream& os, const CorrelationSurface& s) {
    os << "t_ps,tau_ps,re,im\n";
    char buf[160];
    for (int i = 0; i < s.grid.n_outer; ++i)
        for (int j = 0; j < s.grid.n_tau; ++j) {
            const Complex v = s.values(i, j);
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.12e,%.12e\n", i * s.grid.spacing, j * s.grid.spacing,
                          v.real(), v.imag());
            os << buf;
        }
}

} // namespace qdsps::correlators
