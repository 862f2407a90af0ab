#pragma once

// Fixed-step RK4 integration of the master equation on the grid t_k = t_start + k dt.

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "qdsps/algebra.hpp"
#include "qdsps/models.hpp"

namespace qdsps::evolver {

using models::DissipatorKind;
using models::DissipatorOptions;
using models::SystemModel;

struct TimeGrid {
    double t_start{0.0};
    double t_end{0.0};
    double dt{0.01};
    int sample_stride{10};

    // Throws std::invalid_argument on dt <= 0, stride < 1 or a non-integer step count.
    void validate() const;
    long steps() const;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Matrix> states;  // empty when states were not requested
    // Real series keyed by name: one per QD level ("x", "y", "u"), "n_cav", "excitation".
    std::map<std::string, std::vector<double>> observables;
    std::vector<Complex> a_mean;  // <a>(t)
    double dt{0.0};
    int sample_stride{1};
    bool decayed{false};
    double max_trace_error{0.0};
    double max_hermiticity_error{0.0};
    double min_eigenvalue{0.0};
    std::vector<std::string> warnings;

    double sample_spacing() const { return dt * sample_stride; }
    double t_end() const { return times.empty() ? 0.0 : times.back(); }
};

struct IntegrateOptions {
    bool record_states{true};
    double positivity_tol{1e-6};
    double trace_tol{1e-6};
    DissipatorOptions dissipator{};
    // Use the cached RK4 step matrix once the generator is time independent.
    // The result is the same RK4 map up to floating-point rounding.
    bool constant_tail{true};
};

// Generator applied to rho at absolute time t.
Matrix rhs(const Matrix& rho, double t, const SystemModel& model, DissipatorKind kind,
           const DissipatorOptions& opt = {});

// Single-step RK4 machinery shared with the regression code. Step k advances
// from t_start + k dt to t_start + (k+1) dt.
class Stepper {
public:
    Stepper(const SystemModel& model, DissipatorKind kind, double dt, double t_start = 0.0,
            DissipatorOptions opt = {});

    const SystemModel& model() const { return model_; }
    DissipatorKind kind() const { return kind_; }
    double dt() const { return dt_; }
    double time(long k) const { return t_start_ + static_cast<double>(k) * dt_; }

    // Generator slice at t_start + half_index dt/2; the last one is memoised.
    const models::GeneratorSlice& slice(long half_index);
    void step(Matrix& rho, long k);

    // First step index from which every RK4 stage sees a vanishing drive.
    long constant_from() const { return constant_from_; }
    // Superoperator of the constant generator (d^2 x d^2, column-major vec).
    const Matrix& constant_superoperator();
    // RK4 step matrix of the constant generator raised to the n-th power.
    const Matrix& constant_step_power(long n);

private:
    const SystemModel& model_;
    DissipatorKind kind_;
    double dt_;
    double t_start_;
    DissipatorOptions opt_;
    long constant_from_;

    long cached_index_[2]{-1, -1};
    models::GeneratorSlice cached_[2];
    int next_slot_{0};

    Matrix constant_l_;
    std::unordered_map<long, Matrix> powers_;
};

Trajectory integrate(const algebra::DensityMatrix& rho0, const TimeGrid& grid, const SystemModel& model,
                     DissipatorKind kind, const IntegrateOptions& opt = {});

struct DecayOptions {
    double dt{0.01};
    int sample_stride{10};
    double threshold{1e-6};
    std::optional<double> t_max;  // default: center + 20 / emission rate
    IntegrateOptions integrate{};
};

// Integrates from t = 0 until the bright excitation drops below the threshold
// (checked at recorded samples once the pulse has ended) or t_max is reached.
Trajectory run_until_decayed(const algebra::DensityMatrix& rho0, const SystemModel& model, DissipatorKind kind,
                             const DecayOptions& opt = {});

double default_t_max(const SystemModel& model);

// dt * fastest rate; values above 0.05 trigger a stability warning.
double stability_number(const SystemModel& model, double dt);

} // namespace qdsps::evolver
