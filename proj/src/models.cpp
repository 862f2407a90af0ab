#include "qdsps/models.hpp"

#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace qdsps::models {

namespace loc = algebra::local;

void PulseParams::validate() const {
    if (!(tau_p > 0.0)) throw std::invalid_argument("pulse tau_p must be > 0");
    if (!(area_theta >= 0.0)) throw std::invalid_argument("pulse area must be >= 0");
    if (center && !std::isfinite(*center)) throw std::invalid_argument("pulse center must be finite");
}

double pulse_envelope(double t, const PulseParams& p) {
    const double x = (t - p.center_time()) / p.tau_p;
    if (std::abs(x) > 6.0) return 0.0;
    return p.peak_rabi() * std::exp(-x * x);
}

std::string to_string(DissipatorKind kind) {
    switch (kind) {
    case DissipatorKind::WeakFull: return "weak_full";
    case DissipatorKind::WeakSimplified: return "weak_simplified";
    case DissipatorKind::Polaron: return "polaron";
    case DissipatorKind::None: return "none";
    }
    return "unknown";
}

DissipatorKind dissipator_from_string(const std::string& name) {
    if (name == "weak_full") return DissipatorKind::WeakFull;
    if (name == "weak_simplified") return DissipatorKind::WeakSimplified;
    if (name == "polaron") return DissipatorKind::Polaron;
    if (name == "none") return DissipatorKind::None;
    throw std::invalid_argument("unknown dissipator '" + name + "' (expected weak_full, weak_simplified, polaron, none)");
}

namespace {

void check_rates(double g, double kappa, double gamma, int n_max) {
    if (!(g >= 0.0)) throw std::invalid_argument("g must be >= 0");
    if (!(kappa >= 0.0)) throw std::invalid_argument("kappa must be >= 0");
    if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
    if (n_max < 2) throw std::invalid_argument("n_max must be >= 2");
}

Matrix sandwich_sum(const Matrix& m, const Matrix& n, const Matrix& rho) {
    // M rho N - N M rho + N rho M^dagger - rho M^dagger N
    const Matrix md = m.adjoint();
    return m * rho * n - n * (m * rho) + n * rho * md - rho * (md * n);
}

} // namespace

void TwoLevelCavityModel::validate() const {
    check_rates(g, kappa, gamma, n_max);
    if (!std::isfinite(delta_l)) throw std::invalid_argument("delta_l must be finite");
    pulse.validate();
    bath.validate();
}

void BiexcitonModel::validate() const {
    check_rates(g, kappa, gamma, n_max);
    if (!(gamma_u >= 0.0)) throw std::invalid_argument("gamma_u must be >= 0");
    if (!(binding_energy > 0.0)) throw std::invalid_argument("binding_energy must be > 0");
    pulse.validate();
    bath.validate();
}

std::vector<std::string> BiexcitonModel::regime_warnings() const {
    std::vector<std::string> out;
    if (kappa > binding_energy / 10.0)
        out.push_back("kappa exceeds E_B/10; cavity coupling to the exciton-ground transition is not negligible");
    if (pulse.tau_p * binding_energy / 4.0 < 3.0)
        out.push_back("tau_p E_B / (4 hbar) = " + std::to_string(pulse.tau_p * binding_energy / 4.0) +
                      " < 3; direct exciton excitation may be significant");
    return out;
}

Matrix GeneratorSlice::apply(const Matrix& rho) const {
    Matrix out = k * rho;
    out.noalias() += rho * k.adjoint();
    for (const auto& [l, r] : terms) out.noalias() += l * rho * r;
    return out;
}

Matrix GeneratorSlice::superoperator() const {
    const Index d = k.rows();
    const Matrix id = Matrix::Identity(d, d);
    Matrix s = algebra::kron(id, k) + algebra::kron(k.conjugate(), id);
    for (const auto& [l, r] : terms) s += algebra::kron(r.transpose(), l);
    return s;
}

// ---------------------------------------------------------------------------

void SystemModel::build_common(int n_qd) {
    const Index nc = n_max_ + 1;
    space_ = HilbertSpace({n_qd, nc});
    a_ = algebra::kron(loc::identity(n_qd), loc::destroy(nc));
    n_cav_ = a_.adjoint() * a_;
    ground_vacuum_ = Matrix::Zero(dim(), dim());
    ground_vacuum_(0, 0) = 1.0;
    bath_ = phonon::PhononBath::shared(bath_params_);
}

SystemModel::SystemModel(const TwoLevelCavityModel& m) {
    m.validate();
    n_max_ = m.n_max;
    pulse_ = m.pulse;
    bath_params_ = m.bath;
    g_ = m.g;
    kappa_ = m.kappa;
    gamma_ = m.gamma;
    delta_l_ = m.delta_l;
    build_common(2);
    const Index nc = n_max_ + 1;
    auto qd = [&](const Matrix& q) { return algebra::kron(q, loc::identity(nc)); };

    sm_ = qd(loc::projector(2, 0, 1));
    const Matrix sp = sm_.adjoint();
    sx_ = sm_ + sp;
    sy_ = I_unit * (sm_ - sp);
    sz_ = sp * sm_ - sm_ * sp;
    coupling_ = sp * sm_;

    delta_x_ = bath_->polaron_shift() - delta_l_;
    delta_c_ = -delta_l_;
    h0_ = delta_x_ * coupling_ + delta_c_ * n_cav_;
    h_drive_ = 0.5 * sx_;
    h_cav_ = g_ * (sp * a_ + sm_ * a_.adjoint());

    collapse_ = {std::sqrt(kappa_) * a_, std::sqrt(gamma_) * sm_};
    populations_ = {{"x", coupling_}};
    excitation_ = coupling_ + n_cav_;
    bright_ = excitation_;

    collapse_sum_ = Matrix::Zero(dim(), dim());
    for (const auto& c : collapse_) collapse_sum_ += c.adjoint() * c;
}

SystemModel::SystemModel(const BiexcitonModel& m) {
    m.validate();
    warnings_ = m.regime_warnings();
    for (const auto& w : warnings_) spdlog::warn("{}", w);
    biexciton_ = true;
    n_max_ = m.n_max;
    pulse_ = m.pulse;
    bath_params_ = m.bath;
    g_ = m.g;
    kappa_ = m.kappa;
    gamma_ = m.gamma;
    gamma_u_ = m.gamma_u;
    binding_energy_ = m.binding_energy;
    build_common(4);
    const Index nc = n_max_ + 1;
    auto qd = [&](Index i, Index j) { return algebra::kron(loc::projector(4, i, j), loc::identity(nc)); };
    enum : Index { G = 0, X = 1, Y = 2, U = 3 };

    sm_ = qd(G, X);
    const Matrix smu = qd(X, U);
    sx_ = sm_ + sm_.adjoint();
    sy_ = I_unit * (sm_ - sm_.adjoint());
    sz_ = sm_.adjoint() * sm_ - sm_ * sm_.adjoint();
    const Matrix pxx = qd(X, X), pyy = qd(Y, Y), puu = qd(U, U);
    coupling_ = 2.0 * puu + pxx;

    delta_x_ = 0.5 * binding_energy_;
    delta_c_ = -0.5 * binding_energy_;
    h0_ = delta_x_ * pxx + delta_c_ * n_cav_;
    if (m.compensate_polaron_shift) h0_ += bath_->polaron_shift() * (pxx + 4.0 * puu);
    h_drive_ = 0.5 * (sx_ + smu + smu.adjoint());
    h_cav_ = g_ * (a_.adjoint() * smu + a_ * smu.adjoint());

    collapse_ = {std::sqrt(kappa_) * a_, std::sqrt(gamma_u_ / 2.0) * smu, std::sqrt(gamma_u_ / 2.0) * qd(Y, U),
                 std::sqrt(gamma_) * sm_, std::sqrt(gamma_) * qd(G, Y)};
    populations_ = {{"x", pxx}, {"y", pyy}, {"u", puu}};
    excitation_ = pxx + pyy + puu + n_cav_;
    bright_ = puu + n_cav_;

    collapse_sum_ = Matrix::Zero(dim(), dim());
    for (const auto& c : collapse_) collapse_sum_ += c.adjoint() * c;
}

const phonon::PhononBath& SystemModel::bath() const { return *bath_; }

double SystemModel::purcell() const {
    const double emitter = biexciton_ ? gamma_u_ / 2.0 : gamma_;
    if (g_ == 0.0) return 0.0;
    return 4.0 * g_ * g_ / (kappa_ * emitter);
}

double SystemModel::emission_rate() const {
    const double emitter = biexciton_ ? gamma_u_ : gamma_;
    return emitter + (kappa_ > 0.0 ? 4.0 * g_ * g_ / kappa_ : 0.0);
}

double SystemModel::fastest_rate() const {
    return std::max({pulse_.peak_rabi(), g_, kappa_, std::abs(delta_l_), 0.5 * binding_energy_});
}

Matrix SystemModel::hamiltonian_at(double omega, bool with_cavity) const {
    Matrix h = h0_ + omega * h_drive_;
    if (with_cavity) h += h_cav_;
    return h;
}

namespace {

// V [K(l_j - l_k) o (V^dagger X V)] V^dagger
template <typename Table>
Matrix kernel_weighted(const algebra::EigenDecomposition& e, const Matrix& x, const Table& table) {
    const Matrix& v = e.eigenvectors;
    Matrix xt = v.adjoint() * x * v;
    const double scale = xt.cwiseAbs().maxCoeff();
    for (Index j = 0; j < xt.rows(); ++j)
        for (Index k = 0; k < xt.cols(); ++k) {
            if (std::abs(xt(j, k)) <= 1e-15 * scale) {
                xt(j, k) = 0.0;
                continue;
            }
            xt(j, k) *= table(e.eigenvalues(j) - e.eigenvalues(k));
        }
    return v * xt * v.adjoint();
}

} // namespace

Matrix SystemModel::weak_m(double t, const DissipatorOptions& opt) const {
    if (bath_params_.alpha == 0.0) return Matrix::Zero(dim(), dim());
    const auto e = algebra::eig_hermitian(hamiltonian_at(rabi(t), !opt.exclude_cavity_from_eigenbasis));
    return kernel_weighted(e, coupling_, bath_->kernel_table());
}

Matrix SystemModel::simplified_m(double t) const {
    if (biexciton_) throw std::invalid_argument("the simplified dissipator is defined for the two-level model only");
    if (bath_params_.alpha == 0.0) return Matrix::Zero(dim(), dim());
    const double dp = bath_->polaron_shift();
    Matrix m = -I_unit * dp * coupling_;
    const double omega = rabi(t);
    if (omega == 0.0) return m;
    const double omega_r = std::hypot(omega, delta_x_);
    const Complex rc = bath_->r_c(omega_r);
    const Complex rs = bath_->r_s(omega_r);
    const Complex half = -I_unit * dp / 2.0 - rc;  // int Gamma sin^2(W_R tau / 2)
    const Complex cz = -(omega * omega / (omega_r * omega_r)) * half;
    const Complex cx = (omega * delta_x_ / (omega_r * omega_r)) * half;
    const Complex cy = -(omega / omega_r) * rs;
    m += cz * sz_ + cx * sx_ + cy * sy_;
    return m;
}

Matrix SystemModel::polaron_hamiltonian(double t) const {
    if (biexciton_) throw std::invalid_argument("the polaron dissipator is defined for the two-level model only");
    const double b = bath_->b_average();
    return -delta_l_ * (coupling_ + n_cav_) + b * (rabi(t) * h_drive_ + h_cav_);
}

std::vector<std::pair<Matrix, Matrix>> SystemModel::polaron_xy(double t) const {
    const Matrix hp = polaron_hamiltonian(t);
    const double omega = rabi(t);
    const Matrix sp = sm_.adjoint();
    const Matrix xg = 0.5 * omega * sx_ + g_ * (sp * a_ + sm_ * a_.adjoint());
    const Matrix xu = -0.5 * omega * sy_ + I_unit * g_ * (sp * a_ - sm_ * a_.adjoint());
    if (bath_params_.alpha == 0.0) {
        const Matrix z = Matrix::Zero(dim(), dim());
        return {{xg, z}, {xu, z}};
    }
    const auto e = algebra::eig_hermitian(hp);
    return {{xg, kernel_weighted(e, xg, bath_->polaron_table_g())},
            {xu, kernel_weighted(e, xu, bath_->polaron_table_u())}};
}

GeneratorSlice SystemModel::generator(double t, DissipatorKind kind, const DissipatorOptions& opt) const {
    GeneratorSlice s;
    const Matrix h = (kind == DissipatorKind::Polaron) ? polaron_hamiltonian(t) : hamiltonian(t);
    s.k = -I_unit * h - 0.5 * collapse_sum_;
    s.terms.reserve(collapse_.size() + 4);
    for (const auto& c : collapse_) s.terms.emplace_back(c, c.adjoint());

    switch (kind) {
    case DissipatorKind::None: break;
    case DissipatorKind::WeakFull:
    case DissipatorKind::WeakSimplified: {
        const Matrix m = (kind == DissipatorKind::WeakFull) ? weak_m(t, opt) : simplified_m(t);
        s.k -= coupling_ * m;
        s.terms.emplace_back(m, coupling_);
        s.terms.emplace_back(coupling_, m.adjoint());
        break;
    }
    case DissipatorKind::Polaron:
        for (const auto& [x, y] : polaron_xy(t)) {
            s.k -= x * y;
            s.terms.emplace_back(y, x);
            s.terms.emplace_back(x, y.adjoint());
        }
        break;
    }
    return s;
}

// ---------------------------------------------------------------------------

Matrix hamiltonian_two_level(double t, const TwoLevelCavityModel& m) { return SystemModel(m).hamiltonian(t); }
Matrix hamiltonian_biexciton(double t, const BiexcitonModel& m) { return SystemModel(m).hamiltonian(t); }

std::vector<std::pair<Matrix, double>> collapse_channels(const TwoLevelCavityModel& m) {
    const SystemModel s(m);
    return {{s.a(), m.kappa}, {s.sigma_minus(), m.gamma}};
}

std::vector<std::pair<Matrix, double>> collapse_channels(const BiexcitonModel& m) {
    const SystemModel s(m);
    const Index nc = m.n_max + 1;
    auto qd = [&](Index i, Index j) { return algebra::kron(loc::projector(4, i, j), loc::identity(nc)); };
    return {{s.a(), m.kappa},
            {qd(1, 3), m.gamma_u / 2.0},
            {qd(2, 3), m.gamma_u / 2.0},
            {qd(0, 1), m.gamma},
            {qd(0, 2), m.gamma}};
}

Matrix phonon_coupling_operator(const TwoLevelCavityModel& m) { return SystemModel(m).coupling(); }
Matrix phonon_coupling_operator(const BiexcitonModel& m) { return SystemModel(m).coupling(); }

Matrix dissipator_weak_full(const Matrix& rho, double t, const SystemModel& m, const DissipatorOptions& opt) {
    return sandwich_sum(m.weak_m(t, opt), m.coupling(), rho);
}

Matrix dissipator_weak_simplified(const Matrix& rho, double t, const SystemModel& m) {
    if (m.is_biexciton()) throw std::invalid_argument("the simplified dissipator is defined for the two-level model only");
    const Matrix& n = m.coupling();
    if (m.bath_params().alpha == 0.0) return Matrix::Zero(rho.rows(), rho.cols());
    const double dp = m.bath().polaron_shift();
    Matrix out = I_unit * dp * (n * rho - rho * n);
    const double omega = m.rabi(t);
    if (omega == 0.0) return out;

    const double dx = m.delta_x();
    const double omega_r = std::hypot(omega, dx);
    const Complex rc = m.bath().r_c(omega_r);
    const Complex rs = m.bath().r_s(omega_r);
    const double gamma_eff = 4.0 * (omega / omega_r) * (omega / omega_r) * rc.real();
    const double cx = omega * dx / (omega_r * omega_r);
    const double cy = omega / omega_r;

    // A rho N - N A rho and its adjoint partner N rho A^dagger - rho A^dagger N.
    auto s = [&](const Matrix& a) -> Matrix { return a * rho * n - n * a * rho; };
    auto sd = [&](const Matrix& a) -> Matrix { return n * rho * a.adjoint() - rho * a.adjoint() * n; };
    const Matrix sx = s(m.sigma_x()), sxd = sd(m.sigma_x());
    const Matrix sy = s(m.sigma_y()), syd = sd(m.sigma_y());

    out += 0.5 * gamma_eff * algebra::lindblad(n, rho);
    out += -I_unit * cx * (0.5 * dp + rc.imag()) * (sx - sxd);
    out += -rc.real() * cx * (sx + sxd);
    out += -rs.real() * cy * (sy + syd);
    out += -I_unit * rs.imag() * cy * (sy - syd);
    return out;
}

Matrix dissipator_polaron(const Matrix& rho, double t, const SystemModel& m) {
    Matrix out = Matrix::Zero(rho.rows(), rho.cols());
    for (const auto& [x, y] : m.polaron_xy(t)) {
        const Matrix yd = y.adjoint();
        out -= x * (y * rho) - y * rho * x + rho * (yd * x) - x * rho * yd;
    }
    return out;
}

double gamma_plus_at(double t, const SystemModel& m) {
    return phonon::gamma_plus(m.rabi(t), m.delta_x(), m.bath_params());
}

double gamma_plus_full_at(double t, const SystemModel& m) { return m.bath().gamma_plus_full(m.rabi(t), m.delta_x()); }

} // namespace qdsps::models
