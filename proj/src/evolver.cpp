#include "qdsps/evolver.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

namespace qdsps::evolver {

void TimeGrid::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("TimeGrid: dt must be > 0");
    if (sample_stride < 1) throw std::invalid_argument("TimeGrid: sample_stride must be >= 1");
    if (!(t_end >= t_start)) throw std::invalid_argument("TimeGrid: t_end must be >= t_start");
    const double n = (t_end - t_start) / dt;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n))
        throw std::invalid_argument("TimeGrid: (t_end - t_start) / dt is not an integer");
}

long TimeGrid::steps() const { return std::lround((t_end - t_start) / dt); }

Matrix rhs(const Matrix& rho, double t, const SystemModel& model, DissipatorKind kind, const DissipatorOptions& opt) {
    return model.generator(t, kind, opt).apply(rho);
}

double stability_number(const SystemModel& model, double dt) { return dt * model.fastest_rate(); }

double default_t_max(const SystemModel& model) {
    const double rate = model.emission_rate();
    const double center = model.pulse().center_time();
    if (rate > 0.0) return center + 20.0 / rate;
    if (model.kappa() > 0.0) return center + 20.0 / model.kappa();
    throw std::invalid_argument("no decay channel: t_max must be given explicitly");
}

// ---------------------------------------------------------------------------

Stepper::Stepper(const SystemModel& model, DissipatorKind kind, double dt, double t_start, DissipatorOptions opt)
    : model_(model), kind_(kind), dt_(dt), t_start_(t_start), opt_(opt) {
    if (!(dt > 0.0)) throw std::invalid_argument("Stepper: dt must be > 0");
    const double end = model.pulse().end_time();
    constant_from_ = (t_start_ > end) ? 0 : static_cast<long>(std::floor((end - t_start_) / dt_)) + 1;
}

const models::GeneratorSlice& Stepper::slice(long half_index) {
    for (int s = 0; s < 2; ++s)
        if (cached_index_[s] == half_index) return cached_[s];
    const int s = next_slot_;
    next_slot_ = 1 - next_slot_;
    cached_[s] = model_.generator(t_start_ + 0.5 * dt_ * static_cast<double>(half_index), kind_, opt_);
    cached_index_[s] = half_index;
    return cached_[s];
}

void Stepper::step(Matrix& rho, long k) {
    const double h = dt_;
    const Matrix k1 = slice(2 * k).apply(rho);
    const models::GeneratorSlice& mid = slice(2 * k + 1);
    const Matrix k2 = mid.apply(rho + 0.5 * h * k1);
    const Matrix k3 = mid.apply(rho + 0.5 * h * k2);
    const Matrix k4 = slice(2 * k + 2).apply(rho + h * k3);
    rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

const Matrix& Stepper::constant_superoperator() {
    if (constant_l_.size() == 0)
        constant_l_ = model_.generator(time(constant_from_), kind_, opt_).superoperator();
    return constant_l_;
}

const Matrix& Stepper::constant_step_power(long n) {
    if (n < 1) throw std::invalid_argument("constant_step_power: n must be >= 1");
    if (auto it = powers_.find(n); it != powers_.end()) return it->second;
    if (n == 1) {
        const Matrix hl = dt_ * constant_superoperator();
        const Index d2 = hl.rows();
        // Taylor polynomial of degree four: exactly one RK4 step of a constant linear ODE.
        Matrix p = Matrix::Identity(d2, d2);
        Matrix term = Matrix::Identity(d2, d2);
        for (int j = 1; j <= 4; ++j) {
            term = (hl * term) / static_cast<double>(j);
            p += term;
        }
        return powers_.emplace(1, std::move(p)).first->second;
    }
    const Matrix& half = constant_step_power(n / 2);
    Matrix p = half * half;
    if (n % 2 == 1) p = constant_step_power(1) * p;
    return powers_.emplace(n, std::move(p)).first->second;
}

// ---------------------------------------------------------------------------

namespace {

Matrix unvec(const Vector& v, Index d) { return Eigen::Map<const Matrix>(v.data(), d, d); }

struct Recorder {
    const SystemModel& model;
    const IntegrateOptions& opt;
    Trajectory& out;

    void record(double t, const Matrix& rho) {
        const Complex tr = rho.trace();
        if (!std::isfinite(tr.real()) || !std::isfinite(tr.imag()))
            throw EngineError("NaN encountered in the density matrix at t = " + std::to_string(t) + " ps");
        out.times.push_back(t);
        if (opt.record_states) out.states.push_back(rho);
        for (const auto& [name, op] : model.populations())
            out.observables[name].push_back(algebra::expectation(op, rho).real());
        out.observables["n_cav"].push_back(algebra::expectation(model.n_cav(), rho).real());
        out.observables["excitation"].push_back(algebra::expectation(model.excitation(), rho).real());
        out.a_mean.push_back(algebra::expectation(model.a(), rho));
        out.max_hermiticity_error = std::max(out.max_hermiticity_error, algebra::hermiticity_error(rho));
        const Matrix herm = 0.5 * (rho + rho.adjoint());
        const double lmin = algebra::min_eigenvalue(herm);
        if (out.times.size() == 1 || lmin < out.min_eigenvalue) out.min_eigenvalue = lmin;
        if (lmin < -opt.positivity_tol)
            spdlog::debug("negative eigenvalue {:.3e} at t = {:.3f} ps", lmin, t);
    }

    void check_trace(double t, const Matrix& rho, double dt) {
        const Complex tr = rho.trace();
        if (!std::isfinite(tr.real()) || !std::isfinite(tr.imag()))
            throw EngineError("NaN encountered in the density matrix at t = " + std::to_string(t) + " ps");
        const double err = std::abs(tr - Complex(1.0));
        out.max_trace_error = std::max(out.max_trace_error, err);
        if (err > opt.trace_tol)
            throw EngineError("trace drift " + std::to_string(err) + " at t = " + std::to_string(t) +
                              " ps exceeds tolerance; reduce dt (currently " + std::to_string(dt) + " ps)");
    }
};

// Core loop: steps from t_start, recording every stride steps, until max_steps
// or until stop(t, rho) returns true at a recorded sample.
Trajectory run_core(const Matrix& rho0, double t_start, double dt, int stride, long max_steps,
                    const SystemModel& model, DissipatorKind kind, const IntegrateOptions& opt,
                    const std::function<bool(double, const Matrix&)>& stop) {
    Trajectory out;
    out.dt = dt;
    out.sample_stride = stride;
    const double stab = stability_number(model, dt);
    if (stab > 0.05) {
        const std::string w = "dt * fastest rate = " + std::to_string(stab) + " exceeds 0.05; RK4 accuracy is doubtful";
        spdlog::warn("{}", w);
        out.warnings.push_back(w);
    }

    Stepper stepper(model, kind, dt, t_start, opt.dissipator);
    Recorder rec{model, opt, out};
    const Index d = model.dim();
    Matrix rho = rho0;
    rec.check_trace(t_start, rho, dt);
    rec.record(t_start, rho);
    if (stop && stop(t_start, rho)) return out;

    long k = 0;
    while (k < max_steps) {
        const bool fast = opt.constant_tail && k >= stepper.constant_from() && k % stride == 0;
        if (fast) {
            Vector v = Eigen::Map<const Vector>(rho.data(), d * d);
            while (k < max_steps) {
                const long n = std::min<long>(stride, max_steps - k);
                v = stepper.constant_step_power(n) * v;
                k += n;
                rho = unvec(v, d);
                const double t = stepper.time(k);
                rec.check_trace(t, rho, dt);
                rec.record(t, rho);
                if (stop && stop(t, rho)) return out;
            }
            break;
        }
        stepper.step(rho, k);
        ++k;
        const double t = stepper.time(k);
        rec.check_trace(t, rho, dt);
        if (k % stride == 0 || k == max_steps) {
            rec.record(t, rho);
            if (stop && stop(t, rho)) return out;
        }
    }
    return out;
}

} // namespace

Trajectory integrate(const algebra::DensityMatrix& rho0, const TimeGrid& grid, const SystemModel& model,
                     DissipatorKind kind, const IntegrateOptions& opt) {
    grid.validate();
    if (!(rho0.space() == model.space())) throw std::invalid_argument("integrate: state and model spaces differ");
    return run_core(rho0.matrix(), grid.t_start, grid.dt, grid.sample_stride, grid.steps(), model, kind, opt, {});
}

Trajectory run_until_decayed(const algebra::DensityMatrix& rho0, const SystemModel& model, DissipatorKind kind,
                             const DecayOptions& opt) {
    if (!(opt.threshold > 0.0)) throw std::invalid_argument("run_until_decayed: threshold must be > 0");
    if (!(opt.dt > 0.0) || opt.sample_stride < 1) throw std::invalid_argument("run_until_decayed: bad dt or stride");
    if (!(rho0.space() == model.space())) throw std::invalid_argument("run_until_decayed: state and model spaces differ");
    const double pulse_end = model.pulse().end_time();
    double t_max = opt.t_max.value_or(default_t_max(model));
    if (t_max < pulse_end) t_max = pulse_end;
    const long block = opt.sample_stride;
    const long max_steps = block * static_cast<long>(std::ceil(t_max / (opt.dt * block) - 1e-9));

    const Matrix& exc = model.bright_excitation();
    const double threshold = opt.threshold;
    double final_exc = 0.0;
    auto stop = [&](double t, const Matrix& rho) {
        final_exc = algebra::expectation(exc, rho).real();
        return t > pulse_end && final_exc < threshold;
    };
    Trajectory out = run_core(rho0.matrix(), 0.0, opt.dt, opt.sample_stride, max_steps, model, kind, opt.integrate, stop);
    out.decayed = out.t_end() > pulse_end && final_exc < threshold;
    if (!out.decayed && final_exc > 10.0 * threshold) {
        const std::string w = "t_max = " + std::to_string(out.t_end()) + " ps reached with excitation " +
                              std::to_string(final_exc) + " above 10x the threshold";
        spdlog::warn("{}", w);
        out.warnings.push_back(w);
    }
    return out;
}

} // namespace qdsps::evolver
