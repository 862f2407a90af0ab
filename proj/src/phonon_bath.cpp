#include "qdsps/phonon_bath.hpp"

#include <cmath>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>

#include <spdlog/spdlog.h>

#include "qdsps/quadrature.hpp"

namespace qdsps::phonon {

namespace {

constexpr double kPi = units::pi;

double coth(double x) { return 1.0 / std::tanh(x); }

// hbar / (2 k_B T) in ps
double half_inverse_thermal(const PhononParams& p) { return 0.5 * units::hbar_over_kT(p.temperature); }

// J(w) coth(hbar w / 2 k_B T) divided by w^power, with the analytic small-w
// limit substituted below 1e-6 omega_b where coth would produce 0/0.
double thermal_weight(double w, int power, const PhononParams& p) {
    const double c = half_inverse_thermal(p);
    if (w < 1e-6 * p.omega_b) return p.alpha * std::pow(w, 2 - power) / c;
    return spectral_density(w, p) * coth(c * w) / std::pow(w, power);
}

// int_0^wmax dw J(w)/w^power [coth cos(w tau) - i sin(w tau)]
Complex thermal_transform(double tau, int power, const PhononParams& p, const QuadratureConfig& q, double scale) {
    const double wmax = q.omega_max_factor * p.omega_b;
    auto integrand = [&](double w) {
        const double jw = (w <= 0.0) ? 0.0 : spectral_density(w, p) / std::pow(w, power);
        const double s = std::sin(w * tau);
        const double c = std::cos(w * tau);
        return Complex(thermal_weight(w, power, p) * c, -jw * s);
    };
    const auto res = quad::adaptive_simpson(integrand, 0.0, wmax, q.rel_tol * scale, q.max_depth);
    if (!res.converged && res.error_estimate > q.convergence_tol * scale)
        throw EngineError("phonon quadrature did not converge at tau = " + std::to_string(tau) +
                          " ps (error estimate " + std::to_string(res.error_estimate) + ")");
    return res.value;
}

// Same transform on the whole grid tau_k = k dtau, k = 0..n-1, with one shared
// adaptive mesh. exp(-i w tau_k) comes from a phase recurrence, resynchronised
// every 256 samples.
std::vector<Complex> thermal_transform_grid(std::size_t n, double dtau, int power, const PhononParams& p,
                                            const QuadratureConfig& q, double scale) {
    const double wmax = q.omega_max_factor * p.omega_b;
    auto integrand = [&](double w, Vector& out) {
        const double a = thermal_weight(w, power, p);
        const double b = (w <= 0.0) ? 0.0 : spectral_density(w, p) / std::pow(w, power);
        const Complex step = std::polar(1.0, -w * dtau);
        Complex z{1.0, 0.0};
        for (std::size_t k = 0; k < n; ++k) {
            if (k % 256 == 0) z = std::polar(1.0, -w * dtau * static_cast<double>(k));
            out(static_cast<Index>(k)) = Complex(a * z.real(), b * z.imag());
            z *= step;
        }
    };
    const auto res =
        quad::adaptive_simpson_vector(integrand, static_cast<Index>(n), 0.0, wmax, q.rel_tol * scale, q.max_depth);
    if (!res.converged && res.error_estimate > q.convergence_tol * scale)
        throw EngineError("phonon quadrature on the tau grid did not converge (error estimate " +
                          std::to_string(res.error_estimate) + ")");
    return {res.value.data(), res.value.data() + res.value.size()};
}

// Scale of the integrand: int J coth / w^power dw.
double thermal_scale(int power, const PhononParams& p, const QuadratureConfig& q) {
    const double wmax = q.omega_max_factor * p.omega_b;
    auto f = [&](double w) { return thermal_weight(w, power, p); };
    const auto res = quad::adaptive_simpson(f, 0.0, wmax, 1e-14 * wmax * p.alpha * std::pow(p.omega_b, 3 - power),
                                            q.max_depth);
    return res.value;
}

// int_0^wmax w^k J(w) dw
double spectral_moment(int k, const PhononParams& p, const QuadratureConfig& q) {
    const double wmax = q.omega_max_factor * p.omega_b;
    auto f = [&](double w) { return w <= 0.0 ? 0.0 : std::pow(w, k) * spectral_density(w, p); };
    const double scale = p.alpha * std::pow(p.omega_b, 4 + k) + 1e-300;
    return quad::adaptive_simpson(f, 0.0, wmax, 1e-14 * scale, q.max_depth).value;
}

} // namespace

void PhononParams::validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("phonon alpha must be >= 0");
    if (!(omega_b > 0.0)) throw std::invalid_argument("phonon omega_b must be > 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("phonon temperature must be > 0");
}

double spectral_density(double omega, const PhononParams& p) {
    if (omega <= 0.0) return 0.0;
    return p.alpha * omega * omega * omega * std::exp(-omega * omega / (2.0 * p.omega_b * p.omega_b));
}

double polaron_shift(const PhononParams& p) { return p.alpha * std::pow(p.omega_b, 3) * std::sqrt(kPi / 2.0); }

Complex kernel(double tau, const PhononParams& p, const QuadratureConfig& q) {
    if (tau < 0.0) throw std::invalid_argument("kernel: tau must be >= 0");
    p.validate();
    if (p.alpha == 0.0) return {0.0, 0.0};
    return thermal_transform(tau, 0, p, q, thermal_scale(0, p, q));
}

Complex polaron_phi(double tau, const PhononParams& p, const QuadratureConfig& q) {
    if (tau < 0.0) throw std::invalid_argument("polaron_phi: tau must be >= 0");
    p.validate();
    if (p.alpha == 0.0) return {0.0, 0.0};
    return thermal_transform(tau, 2, p, q, thermal_scale(2, p, q));
}

double b_average(const PhononParams& p, const QuadratureConfig& q) {
    return std::exp(-0.5 * polaron_phi(0.0, p, q).real());
}

double gamma_plus(double omega_t, double delta_x, const PhononParams& p) {
    const double omega_r = std::hypot(omega_t, delta_x);
    if (omega_r == 0.0 || omega_t == 0.0) return 0.0;
    return 0.25 * kPi * (omega_t / omega_r) * spectral_density(omega_r, p);
}

double gamma_eff(double omega_t, double delta_x, const PhononParams& p) {
    const double omega_r = std::hypot(omega_t, delta_x);
    if (omega_r == 0.0 || omega_t == 0.0) return 0.0;
    const double ratio = omega_t / omega_r;
    return kPi * ratio * ratio * spectral_density(omega_r, p) * coth(half_inverse_thermal(p) * omega_r);
}

double half_fourier_real_closed_form(double delta, const PhononParams& p) {
    const double d = std::abs(delta);
    if (d == 0.0) return 0.0;
    const double sgn = delta > 0.0 ? 1.0 : -1.0;
    return 0.5 * kPi * spectral_density(d, p) * (coth(half_inverse_thermal(p) * d) - sgn);
}

// ---------------------------------------------------------------------------

HalfFourierTable::HalfFourierTable(std::vector<Complex> samples, double dtau, Complex derivative_at_zero,
                                   double delta_max, double delta_step, double interpolation_tol)
    : samples_(std::move(samples)), dtau_(dtau), derivative_at_zero_(derivative_at_zero), delta_max_(delta_max),
      delta_step_(delta_step) {
    if (samples_.size() < 3 || (samples_.size() - 1) % 2 != 0)
        throw std::invalid_argument("HalfFourierTable needs an even number of intervals");
    const auto n = static_cast<std::size_t>(std::llround(2.0 * delta_max_ / delta_step_));
    table_.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) table_[i] = direct(-delta_max_ + static_cast<double>(i) * delta_step_);
    fallback_.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (i == 0 || i + 2 > n) {
            fallback_[i] = true;
            continue;
        }
        const double mid = -delta_max_ + (static_cast<double>(i) + 0.5) * delta_step_;
        const double err = std::abs(interpolate(mid, i) - direct(mid));
        max_interp_error_ = std::max(max_interp_error_, err);
        if (err > interpolation_tol) fallback_[i] = true;
    }
}

double HalfFourierTable::resolved_delta() const { return 2.0 * kPi / (20.0 * dtau_); }

std::size_t HalfFourierTable::fallback_intervals() const {
    std::size_t count = 0;
    for (bool f : fallback_) count += f ? 1 : 0;
    return count;
}

Complex HalfFourierTable::direct_with_stride(double delta, std::size_t stride) const {
    const double h = dtau_ * static_cast<double>(stride);
    const std::size_t last = samples_.size() - 1;
    const Complex step = std::polar(1.0, -delta * h);
    Complex phase{1.0, 0.0};
    Complex sum = 0.5 * samples_[0];
    std::size_t count = 0;
    for (std::size_t k = stride; k <= last; k += stride) {
        ++count;
        // Resynchronise the phase recurrence periodically to bound round-off.
        phase = (count % 256 == 0) ? std::polar(1.0, -delta * static_cast<double>(k) * dtau_) : phase * step;
        sum += (k == last ? 0.5 : 1.0) * samples_[k] * phase;
    }
    // Euler-Maclaurin: subtract (h^2/12)(g'(b) - g'(0)) with g(b) decayed.
    const Complex g_prime0 = derivative_at_zero_ - I_unit * delta * samples_[0];
    return h * sum + (h * h / 12.0) * g_prime0;
}

Complex HalfFourierTable::direct(double delta) const {
    if (std::abs(delta) > resolved_delta())
        throw EngineError("half_fourier: |delta| = " + std::to_string(std::abs(delta)) +
                          " rad/ps is not resolved by the kernel grid");
    return direct_with_stride(delta, 1);
}

Complex HalfFourierTable::interpolate(double delta, std::size_t i) const {
    // Four-point Lagrange on nodes i-1, i, i+1, i+2; x measured in steps from node i.
    const double x = (delta - (-delta_max_ + static_cast<double>(i) * delta_step_)) / delta_step_;
    const double wm1 = -x * (x - 1.0) * (x - 2.0) / 6.0;
    const double w0 = (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0;
    const double w1 = -(x + 1.0) * x * (x - 2.0) / 2.0;
    const double w2 = (x + 1.0) * x * (x - 1.0) / 6.0;
    return wm1 * table_[i - 1] + w0 * table_[i] + w1 * table_[i + 1] + w2 * table_[i + 2];
}

Complex HalfFourierTable::operator()(double delta) const {
    if (table_.empty() || delta <= -delta_max_ || delta >= delta_max_) return direct(delta);
    const auto i = static_cast<std::size_t>((delta + delta_max_) / delta_step_);
    if (i >= fallback_.size() || fallback_[i]) return direct(delta);
    return interpolate(delta, i);
}

// ---------------------------------------------------------------------------

PhononBath::PhononBath(const PhononParams& p, const QuadratureConfig& q) : params_(p), config_(q) {
    params_.validate();
    if (params_.weak_coupling_suspect())
        spdlog::warn("alpha * omega_b^2 = {:.3f} exceeds 0.3; weak phonon coupling is questionable",
                     params_.alpha * params_.omega_b * params_.omega_b);
    polaron_shift_ = phonon::polaron_shift(params_);

    // The thermal part decays on the first Matsubara time hbar / (2 pi k_B T),
    // which is the longer scale at low temperature and large cutoff.
    const double matsubara_time = units::hbar_over_kT(params_.temperature) / (2.0 * kPi);
    double tau_max = config_.tau_max_factor * std::max(1.0 / params_.omega_b, matsubara_time);
    std::size_t intervals = config_.tau_points + (config_.tau_points % 2);
    // 20 samples per period at the largest tabulated detuning.
    while (tau_max / static_cast<double>(intervals) > 2.0 * kPi / (20.0 * config_.delta_max)) intervals *= 2;

    if (params_.alpha == 0.0) {
        weak_ = HalfFourierTable(std::vector<Complex>(intervals + 1, Complex{}), tau_max / intervals, Complex{},
                                 config_.delta_max, config_.delta_step, config_.interpolation_tol);
        return;
    }

    const double scale = thermal_scale(0, params_, config_);
    const Complex derivative0{0.0, -spectral_moment(1, params_, config_)};

    for (int attempt = 0; attempt < 6; ++attempt) {
        const double dtau = tau_max / static_cast<double>(intervals);
        std::vector<Complex> samples = thermal_transform_grid(intervals + 1, dtau, 0, params_, config_, scale);
        samples[0].imag(0.0);

        if (std::abs(samples.back()) >= 1e-6 * std::abs(samples.front())) {
            tau_max *= 2.0;
            intervals *= 2;
            continue;
        }
        HalfFourierTable candidate;
        candidate.samples_ = samples;
        candidate.dtau_ = dtau;
        candidate.derivative_at_zero_ = derivative0;
        const double probe = config_.delta_max;
        if (intervals % 4 == 0 &&
            std::abs(candidate.direct_with_stride(probe, 1) - candidate.direct_with_stride(probe, 2)) >= 1e-6) {
            intervals *= 2;
            continue;
        }
        weak_ = HalfFourierTable(std::move(samples), dtau, derivative0, config_.delta_max, config_.delta_step,
                                 config_.interpolation_tol);
        return;
    }
    throw EngineError("phonon kernel table failed to converge in tau");
}

std::shared_ptr<const PhononBath> PhononBath::shared(const PhononParams& p, const QuadratureConfig& q) {
    using Entry = std::pair<std::pair<PhononParams, QuadratureConfig>, std::shared_ptr<const PhononBath>>;
    static std::shared_mutex mutex;
    static std::vector<Entry> cache;
    {
        std::shared_lock lock(mutex);
        for (const auto& e : cache)
            if (e.first.first == p && e.first.second == q) return e.second;
    }
    auto built = std::make_shared<const PhononBath>(p, q);
    std::unique_lock lock(mutex);
    for (const auto& e : cache)
        if (e.first.first == p && e.first.second == q) return e.second;
    cache.push_back({{p, q}, built});
    return built;
}

Complex PhononBath::r_c(double omega_r) const { return 0.25 * (weak_(omega_r) + weak_(-omega_r)); }

Complex PhononBath::r_s(double omega_r) const { return 0.25 * I_unit * (weak_(omega_r) - weak_(-omega_r)); }

double PhononBath::gamma_plus_full(double omega_t, double delta_x) const {
    const double omega_r = std::hypot(omega_t, delta_x);
    if (omega_r == 0.0) return 0.0;
    return -r_s(omega_r).imag() * omega_t / omega_r - r_c(omega_r).real() * omega_t * delta_x / (omega_r * omega_r);
}

void PhononBath::build_polaron() const {
    std::call_once(polaron_once_, [this] {
        const std::size_t n = weak_.samples().size();
        const double dtau = weak_.dtau();
        phi_.assign(n, Complex{});
        Complex phi_prime0{};
        if (params_.alpha > 0.0) {
            const double scale = thermal_scale(2, params_, config_);
            phi_ = thermal_transform_grid(n, dtau, 2, params_, config_, scale);
            phi_[0].imag(0.0);
            phi_prime0 = Complex(0.0, -spectral_moment(-1, params_, config_));
        }
        b_average_ = std::exp(-0.5 * phi_[0].real());
        const double b2 = b_average_ * b_average_;
        std::vector<Complex> gg(n), gu(n);
        for (std::size_t k = 0; k < n; ++k) {
            gg[k] = b2 * (std::cosh(phi_[k]) - 1.0);
            gu[k] = b2 * std::sinh(phi_[k]);
        }
        if (params_.alpha > 0.0 && std::abs(gu.back()) >= 1e-6 * std::abs(gu.front()))
            throw EngineError("polaron Green functions have not decayed on the kernel grid");
        const Complex dgg = b2 * std::sinh(phi_[0]) * phi_prime0;
        const Complex dgu = b2 * std::cosh(phi_[0]) * phi_prime0;
        polaron_g_ = HalfFourierTable(std::move(gg), dtau, dgg, config_.delta_max, config_.delta_step,
                                      config_.interpolation_tol);
        polaron_u_ = HalfFourierTable(std::move(gu), dtau, dgu, config_.delta_max, config_.delta_step,
                                      config_.interpolation_tol);
    });
}

double PhononBath::b_average() const {
    build_polaron();
    return b_average_;
}

Complex PhononBath::phi(double tau) const {
    build_polaron();
    const double x = tau / weak_.dtau();
    const auto k = static_cast<std::size_t>(std::llround(x));
    if (std::abs(x - static_cast<double>(k)) > 1e-9 || k >= phi_.size())
        throw std::invalid_argument("PhononBath::phi: tau is not on the kernel grid");
    return phi_[k];
}

const HalfFourierTable& PhononBath::polaron_table_g() const {
    build_polaron();
    return polaron_g_;
}

const HalfFourierTable& PhononBath::polaron_table_u() const {
    build_polaron();
    return polaron_u_;
}

Complex half_fourier(double delta, const PhononParams& p) { return PhononBath::shared(p)->half_fourier(delta); }
Complex r_c(double omega_r, const PhononParams& p) { return PhononBath::shared(p)->r_c(omega_r); }
Complex r_s(double omega_r, const PhononParams& p) { return PhononBath::shared(p)->r_s(omega_r); }

} // namespace qdsps::phonon
