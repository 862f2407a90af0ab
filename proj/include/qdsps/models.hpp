#pragma once

// System models for the three excitation schemes. Frequencies are in rad/ps
// and every Hamiltonian is H/hbar in the frame rotating at the laser frequency.

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qdsps/algebra.hpp"
#include "qdsps/phonon_bath.hpp"
#include "qdsps/units.hpp"

namespace qdsps::models {

using algebra::HilbertSpace;

struct PulseParams {
    double area_theta{units::pi};
    double tau_p{2.0};               // ps
    std::optional<double> center;    // ps, defaults to 3 tau_p

    void validate() const;
    double center_time() const { return center.value_or(3.0 * tau_p); }
    double peak_rabi() const { return area_theta / (std::sqrt(units::pi) * tau_p); }
    double fwhm() const { return units::fwhm_from_tau_p(tau_p); }
    // Beyond center + 6 tau_p the envelope is below exp(-36) of its peak and is
    // treated as exactly zero, so the generator becomes time independent.
    double end_time() const { return center_time() + 6.0 * tau_p; }
};

// Omega(t) = Theta / (sqrt(pi) tau_p) exp(-((t - center)/tau_p)^2), zero
// outside |t - center| <= 6 tau_p.
double pulse_envelope(double t, const PulseParams& p);

enum class DissipatorKind { WeakFull, WeakSimplified, Polaron, None };

std::string to_string(DissipatorKind kind);
// Accepts weak_full, weak_simplified, polaron, none.
DissipatorKind dissipator_from_string(const std::string& name);

struct TwoLevelCavityModel {
    double delta_l{0.0};                           // >= 0 drives above resonance
    double g{units::ueV_to_rad_per_ps(20.0)};
    double kappa{units::ueV_to_rad_per_ps(50.0)};
    double gamma{units::ueV_to_rad_per_ps(1.0)};
    int n_max{2};
    PulseParams pulse{};
    phonon::PhononParams bath{};

    void validate() const;
};

struct BiexcitonModel {
    double binding_energy{units::meV_to_rad_per_ps(3.0)};  // E_B / hbar
    double g{units::ueV_to_rad_per_ps(20.0)};
    double kappa{units::ueV_to_rad_per_ps(50.0)};
    double gamma{units::ueV_to_rad_per_ps(1.0)};
    double gamma_u{units::ueV_to_rad_per_ps(2.0)};
    int n_max{2};
    PulseParams pulse{};
    phonon::PhononParams bath{};
    // Adds +Delta_P to |x> and +4 Delta_P to |u> so that the phonon-renormalised
    // levels keep the two-photon and cavity resonances of the bare Hamiltonian.
    // false uses the bare levels, which leaves the u-x transition 3 Delta_P
    // below the cavity once the phonon dissipator is on.
    bool compensate_polaron_shift{true};

    void validate() const;
    // Warns when kappa > E_B / 10 or tau_p E_B / (4 hbar) < 3.
    std::vector<std::string> regime_warnings() const;
};

struct DissipatorOptions {
    // Drop the exciton-cavity coupling from the Hamiltonian used for the
    // eigenbasis of the weak-coupling kernel.
    bool exclude_cavity_from_eigenbasis{false};
};

// rhs = K rho + rho K^dagger + sum_i L_i rho R_i
struct GeneratorSlice {
    Matrix k;
    std::vector<std::pair<Matrix, Matrix>> terms;

    Matrix apply(const Matrix& rho) const;
    // Column-major vec: vec(L rho R) = (R^T kron L) vec(rho).
    Matrix superoperator() const;
};

// Immutable, fully embedded model. Dissipator evaluation is pure in (rho, t).
class SystemModel {
public:
    explicit SystemModel(const TwoLevelCavityModel& m);
    explicit SystemModel(const BiexcitonModel& m);

    bool is_biexciton() const { return biexciton_; }
    // Regime warnings raised while building the model.
    const std::vector<std::string>& warnings() const { return warnings_; }
    const HilbertSpace& space() const { return space_; }
    Index dim() const { return space_.total_dim(); }
    int n_max() const { return n_max_; }
    const PulseParams& pulse() const { return pulse_; }
    const phonon::PhononParams& bath_params() const { return bath_params_; }
    const phonon::PhononBath& bath() const;

    double rabi(double t) const { return pulse_envelope(t, pulse_); }
    double g() const { return g_; }
    double kappa() const { return kappa_; }
    double gamma() const { return gamma_; }
    double gamma_u() const { return gamma_u_; }
    double delta_l() const { return delta_l_; }
    double binding_energy() const { return binding_energy_; }
    // Two-level detunings from the resonance condition.
    double delta_x() const { return delta_x_; }
    double delta_c() const { return delta_c_; }
    double purcell() const;

    // H_S / hbar at drive strength omega; with_cavity = false drops the g term.
    Matrix hamiltonian_at(double omega, bool with_cavity = true) const;
    Matrix hamiltonian(double t) const { return hamiltonian_at(rabi(t)); }

    // Collapse operators with sqrt(rate) folded in.
    const std::vector<Matrix>& collapse() const { return collapse_; }
    const Matrix& coupling() const { return coupling_; }  // N or N_ux
    const Matrix& a() const { return a_; }
    const Matrix& n_cav() const { return n_cav_; }
    // Named QD level projectors: x (two-level); x, y, u (biexciton).
    const std::vector<std::pair<std::string, Matrix>>& populations() const { return populations_; }
    // Total excitation: QD excited projectors plus a^dagger a.
    const Matrix& excitation() const { return excitation_; }
    // Excitation that can still reach the cavity: equal to excitation() for the
    // two-level model, u population plus a^dagger a for the biexciton.
    const Matrix& bright_excitation() const { return bright_; }
    // Decay rate of the cavity-coupled emitter state including the cavity channel
    // in the bad-cavity limit: gamma + 4g^2/kappa, or gamma_u + 4g^2/kappa.
    double emission_rate() const;
    const Matrix& ground_vacuum() const { return ground_vacuum_; }

    // Two-level QD operators embedded on the composite space.
    const Matrix& sigma_x() const { return sx_; }
    const Matrix& sigma_y() const { return sy_; }
    const Matrix& sigma_z() const { return sz_; }
    const Matrix& sigma_minus() const { return sm_; }

    // Largest rate entering the stability guard: max(Omega_0, g, kappa, |delta_l|, E_B/2).
    double fastest_rate() const;

    // Dissipator building blocks.
    Matrix weak_m(double t, const DissipatorOptions& opt = {}) const;
    Matrix simplified_m(double t) const;
    // Returns (X_g, Y_g) and (X_u, Y_u).
    std::vector<std::pair<Matrix, Matrix>> polaron_xy(double t) const;
    Matrix polaron_hamiltonian(double t) const;

    GeneratorSlice generator(double t, DissipatorKind kind, const DissipatorOptions& opt = {}) const;

private:
    void build_common(int n_qd);

    bool biexciton_{false};
    HilbertSpace space_;
    int n_max_{2};
    PulseParams pulse_;
    phonon::PhononParams bath_params_;
    std::shared_ptr<const phonon::PhononBath> bath_;
    double g_{0}, kappa_{0}, gamma_{0}, gamma_u_{0}, delta_l_{0}, binding_energy_{0};
    double delta_x_{0}, delta_c_{0};

    Matrix h0_, h_drive_, h_cav_;  // H = h0 + Omega h_drive + h_cav
    Matrix a_, n_cav_, coupling_, excitation_, bright_, ground_vacuum_;
    Matrix sx_, sy_, sz_, sm_;
    std::vector<Matrix> collapse_;
    Matrix collapse_sum_;  // sum A^dagger A
    std::vector<std::pair<std::string, Matrix>> populations_;
    std::vector<std::string> warnings_;
};

// Free-function forms of the model operations.
Matrix hamiltonian_two_level(double t, const TwoLevelCavityModel& m);
Matrix hamiltonian_biexciton(double t, const BiexcitonModel& m);
std::vector<std::pair<Matrix, double>> collapse_channels(const TwoLevelCavityModel& m);
std::vector<std::pair<Matrix, double>> collapse_channels(const BiexcitonModel& m);
Matrix phonon_coupling_operator(const TwoLevelCavityModel& m);
Matrix phonon_coupling_operator(const BiexcitonModel& m);

// L rho = M rho N - N M rho + N rho M^dagger - rho M^dagger N, with M the
// kernel-weighted N in the instantaneous eigenbasis of H_S(t).
Matrix dissipator_weak_full(const Matrix& rho, double t, const SystemModel& m, const DissipatorOptions& opt = {});
// Closed-form two-level version without the cavity in the eigenbasis; evaluated
// term by term (polaron shift, drive-induced dephasing, sigma_x and sigma_y
// cross terms).
Matrix dissipator_weak_simplified(const Matrix& rho, double t, const SystemModel& m);
Matrix dissipator_polaron(const Matrix& rho, double t, const SystemModel& m);

// Gamma+(t) along the pulse, closed form and with the detuning-odd term.
double gamma_plus_at(double t, const SystemModel& m);
double gamma_plus_full_at(double t, const SystemModel& m);

} // namespace qdsps::models
