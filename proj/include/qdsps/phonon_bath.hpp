#pragma once

// Bath-side scalar functions for exciton coupling to longitudinal acoustic
// phonons with a super-ohmic, Gaussian-cutoff spectral density
//
//     J(w) = alpha w^3 exp(-w^2 / (2 w_b^2)).
//
// Everything a dissipator needs is reduced to half-range Fourier transforms
// K(D) = int_0^inf f(tau) exp(-i D tau) dtau of a tabulated bath correlation
// function f, sampled once per parameter set and shared through a cache.

#include <complex>
#include <memory>
#include <mutex>
#include <vector>

#include "qdsps/algebra.hpp"
#include "qdsps/units.hpp"

namespace qdsps::phonon {

struct PhononParams {
    double alpha{0.03};                                   // ps^2
    double omega_b{units::meV_to_rad_per_ps(0.9)};        // rad/ps
    double temperature{4.0};                              // K

    // Throws std::invalid_argument on alpha < 0, omega_b <= 0 or T <= 0.
    void validate() const;
    // alpha * omega_b^2 above 0.3 leaves the weak-coupling regime.
    bool weak_coupling_suspect() const { return alpha * omega_b * omega_b > 0.3; }

    bool operator==(const PhononParams&) const = default;
};

struct QuadratureConfig {
    double omega_max_factor{8.0};  // frequency integrals run over [0, factor * omega_b]
    double rel_tol{1e-12};         // relative to the integral of |integrand|
    double convergence_tol{1e-8};  // relative error above which a quadrature is rejected
    int max_depth{40};
    double tau_max_factor{30.0};   // tau_max = factor * max(1 / omega_b, Matsubara time)
    std::size_t tau_points{4000};
    double delta_max{40.0};        // half-Fourier table covers [-delta_max, delta_max] rad/ps
    double delta_step{0.01};       // rad/ps
    double interpolation_tol{1e-5};

    bool operator==(const QuadratureConfig&) const = default;
};

double spectral_density(double omega, const PhononParams& p);

// int_0^inf J(w)/w dw = alpha omega_b^3 sqrt(pi/2)
double polaron_shift(const PhononParams& p);

// Gamma_w(tau) = int dw J(w) [coth(hbar w / 2 k_B T) cos(w tau) - i sin(w tau)]
Complex kernel(double tau, const PhononParams& p, const QuadratureConfig& q = {});

// phi(tau) = int dw J(w)/w^2 [coth(hbar w / 2 k_B T) cos(w tau) - i sin(w tau)]
Complex polaron_phi(double tau, const PhononParams& p, const QuadratureConfig& q = {});

// <B> = exp(-phi(0)/2)
double b_average(const PhononParams& p, const QuadratureConfig& q = {});

// Closed-form rates at effective drive omega_t and exciton detuning delta_x.
// Phonon-assisted excitation rate (pi/4)(W/W_R) J(W_R), W_R = sqrt(W^2 + D_x^2).
double gamma_plus(double omega_t, double delta_x, const PhononParams& p);
// Drive-induced pure dephasing pi (W/W_R)^2 J(W_R) coth(hbar W_R / 2 k_B T).
double gamma_eff(double omega_t, double delta_x, const PhononParams& p);

// Re K(D) for the weak-coupling kernel: (pi/2) J(|D|) [coth(hbar|D|/2k_BT) - sgn D]
double half_fourier_real_closed_form(double delta, const PhononParams& p);

// Uniformly sampled correlation function with its half-range Fourier
// transform. K(D) is evaluated by the trapezoid rule with the leading
// Euler-Maclaurin end correction (which needs f'(0)), and cached on a
// uniform D grid for cubic interpolation.
class HalfFourierTable {
public:
    HalfFourierTable() = default;
    HalfFourierTable(std::vector<Complex> samples, double dtau, Complex derivative_at_zero, double delta_max,
                     double delta_step, double interpolation_tol);

    // Direct trapezoid evaluation, no interpolation.
    Complex direct(double delta) const;
    // Cached evaluation; falls back to direct() outside the table or in
    // intervals whose midpoint interpolation error exceeded the tolerance.
    Complex operator()(double delta) const;

    const std::vector<Complex>& samples() const { return samples_; }
    double dtau() const { return dtau_; }
    double tau_max() const { return dtau_ * static_cast<double>(samples_.size() - 1); }
    double delta_max() const { return delta_max_; }
    // Largest |D| for which the grid keeps 20 samples per oscillation period.
    double resolved_delta() const;
    std::size_t fallback_intervals() const;
    double max_interpolation_error() const { return max_interp_error_; }

private:
    Complex direct_with_stride(double delta, std::size_t stride) const;
    Complex interpolate(double delta, std::size_t i) const;

    std::vector<Complex> samples_;
    double dtau_{0.0};
    Complex derivative_at_zero_{};
    double delta_max_{0.0};
    double delta_step_{0.0};
    std::vector<Complex> table_;
    std::vector<bool> fallback_;
    double max_interp_error_{0.0};

    friend class PhononBath;
};

// All tables for one parameter set. Immutable once constructed except for the
// lazily built polaron tables, which are guarded by std::call_once.
class PhononBath {
public:
    PhononBath(const PhononParams& p, const QuadratureConfig& q = {});

    // Shared instance from a process-wide cache keyed by (params, config).
    // Concurrent readers, single writer; semantics identical to constructing anew.
    static std::shared_ptr<const PhononBath> shared(const PhononParams& p, const QuadratureConfig& q = {});

    const PhononParams& params() const { return params_; }
    const QuadratureConfig& config() const { return config_; }
    double polaron_shift() const { return polaron_shift_; }

    const HalfFourierTable& kernel_table() const { return weak_; }
    // Gamma_w on the table grid.
    const std::vector<Complex>& kernel_samples() const { return weak_.samples(); }
    double tau_step() const { return weak_.dtau(); }

    // K(D) = int_0^inf Gamma_w(tau) exp(-i D tau) dtau
    Complex half_fourier(double delta) const { return weak_(delta); }
    // R_c = (1/2) int Gamma_w cos(W_R tau) = [K(W_R) + K(-W_R)] / 4
    Complex r_c(double omega_r) const;
    // R_s = (1/2) int Gamma_w sin(W_R tau) = i [K(W_R) - K(-W_R)] / 4
    Complex r_s(double omega_r) const;
    // Excitation rate including the detuning-odd term:
    // -Im R_s (W/W_R) - Re R_c (W D_x / W_R^2)
    double gamma_plus_full(double omega_t, double delta_x) const;

    // Polaron-frame functions.
    double b_average() const;
    Complex phi(double tau) const;                // tabulated, tau on the grid only
    const HalfFourierTable& polaron_table_g() const;
    const HalfFourierTable& polaron_table_u() const;

private:
    void build_polaron() const;

    PhononParams params_;
    QuadratureConfig config_;
    double polaron_shift_{0.0};
    HalfFourierTable weak_;

    mutable std::once_flag polaron_once_;
    mutable double b_average_{1.0};
    mutable std::vector<Complex> phi_;
    mutable HalfFourierTable polaron_g_;
    mutable HalfFourierTable polaron_u_;
};

// Convenience wrappers over the shared bath for the given parameters.
Complex half_fourier(double delta, const PhononParams& p);
Complex r_c(double omega_r, const PhononParams& p);
Complex r_s(double omega_r, const PhononParams& p);

} // namespace qdsps::phonon
