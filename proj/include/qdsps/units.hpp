#pragma once

#include <cmath>

// Physical constants and unit conversions. Internally every frequency and
// rate is in rad/ps, times are in ps and temperatures in K.

namespace qdsps::units {

inline constexpr double hbar_meV_ps = 0.6582119569;    // meV ps
inline constexpr double k_B_meV_per_K = 0.08617333262; // meV / K
inline constexpr double pi = 3.14159265358979323846;

constexpr double meV_to_rad_per_ps(double e_meV) { return e_meV / hbar_meV_ps; }
constexpr double ueV_to_rad_per_ps(double e_ueV) { return 1e-3 * e_ueV / hbar_meV_ps; }
constexpr double rad_per_ps_to_meV(double w) { return w * hbar_meV_ps; }
constexpr double rad_per_ps_to_ueV(double w) { return 1e3 * w * hbar_meV_ps; }

// hbar / (k_B T) in ps.
constexpr double hbar_over_kT(double temperature_K) { return hbar_meV_ps / (k_B_meV_per_K * temperature_K); }

// FWHM of the envelope exp(-(t/tau_p)^2): 2 sqrt(ln 2) tau_p.
inline double fwhm_from_tau_p(double tau_p) { return 2.0 * std::sqrt(std::log(2.0)) * tau_p; }
inline double tau_p_from_fwhm(double fwhm) { return fwhm / (2.0 * std::sqrt(std::log(2.0))); }

} // namespace qdsps::units
