#include "qdsps/algebra.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qdsps::algebra {

HilbertSpace::HilbertSpace(std::vector<Index> factor_dims) : factor_dims_(std::move(factor_dims)) {
    if (factor_dims_.empty()) throw std::invalid_argument("HilbertSpace needs at least one factor");
    total_dim_ = 1;
    for (Index d : factor_dims_) {
        if (d < 1) throw std::invalid_argument("HilbertSpace factor dimension must be >= 1");
        total_dim_ *= d;
    }
}

HilbertSpace HilbertSpace::tensor(const HilbertSpace& other) const {
    std::vector<Index> dims = factor_dims_;
    dims.insert(dims.end(), other.factor_dims_.begin(), other.factor_dims_.end());
    return HilbertSpace(std::move(dims));
}

Index HilbertSpace::basis_index(const std::vector<Index>& labels) const {
    if (labels.size() != factor_dims_.size()) throw std::invalid_argument("basis_index: wrong number of labels");
    Index idx = 0;
    for (std::size_t f = 0; f < labels.size(); ++f) {
        if (labels[f] < 0 || labels[f] >= factor_dims_[f]) throw std::out_of_range("basis_index: label out of range");
        idx = idx * factor_dims_[f] + labels[f];
    }
    return idx;
}

Operator::Operator(HilbertSpace space, Matrix elements) : space_(std::move(space)), elements_(std::move(elements)) {
    if (elements_.rows() != elements_.cols()) throw std::invalid_argument("Operator matrix must be square");
    if (elements_.rows() != space_.total_dim())
        throw std::invalid_argument("Operator dimension " + std::to_string(elements_.rows()) +
                                    " does not match space dimension " + std::to_string(space_.total_dim()));
}

Operator Operator::identity(const HilbertSpace& space) {
    return {space, Matrix::Identity(space.total_dim(), space.total_dim())};
}

Operator Operator::zero(const HilbertSpace& space) { return {space, Matrix::Zero(space.total_dim(), space.total_dim())}; }

Operator Operator::dagger() const { return {space_, elements_.adjoint()}; }

bool Operator::is_hermitian(double tol) const { return hermiticity_error(elements_) <= tol; }

namespace {
void require_same_space(const HilbertSpace& a, const HilbertSpace& b) {
    if (!(a == b)) throw std::invalid_argument("operators act on different Hilbert spaces");
}
} // namespace

Operator Operator::operator+(const Operator& rhs) const {
    require_same_space(space_, rhs.space_);
    return {space_, elements_ + rhs.elements_};
}

Operator Operator::operator-(const Operator& rhs) const {
    require_same_space(space_, rhs.space_);
    return {space_, elements_ - rhs.elements_};
}

Operator Operator::operator*(const Operator& rhs) const {
    require_same_space(space_, rhs.space_);
    return {space_, elements_ * rhs.elements_};
}

Operator Operator::operator*(Complex s) const { return {space_, s * elements_}; }

DensityMatrix::DensityMatrix(HilbertSpace space, Matrix elements)
    : space_(std::move(space)), elements_(std::move(elements)) {
    if (elements_.rows() != elements_.cols() || elements_.rows() != space_.total_dim())
        throw std::invalid_argument("DensityMatrix dimension does not match its space");
    if (hermiticity_error(elements_) > 1e-10) throw std::invalid_argument("DensityMatrix is not Hermitian");
    if (std::abs(elements_.trace() - Complex(1.0)) > 1e-8) throw std::invalid_argument("DensityMatrix trace is not 1");
}

DensityMatrix DensityMatrix::basis_state(const HilbertSpace& space, const std::vector<Index>& labels) {
    const Index i = space.basis_index(labels);
    Matrix m = Matrix::Zero(space.total_dim(), space.total_dim());
    m(i, i) = 1.0;
    return {space, std::move(m)};
}

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Operator kron(const Operator& a, const Operator& b) {
    return {a.space().tensor(b.space()), kron(a.matrix(), b.matrix())};
}

EigenDecomposition eig_hermitian(const Matrix& h) {
    if (h.rows() != h.cols()) throw std::invalid_argument("eig_hermitian: matrix is not square");
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    const double herr = hermiticity_error(h);
    if (herr > 1e-10 * scale)
        throw std::invalid_argument("eig_hermitian: input is not Hermitian (max |H - H^dagger| = " +
                                    std::to_string(herr) + ")");

    Eigen::SelfAdjointEigenSolver<Matrix> solver(h);
    if (solver.info() != Eigen::Success) throw EngineError("eig_hermitian: eigensolver failed to converge");

    EigenDecomposition out{solver.eigenvalues(), solver.eigenvectors()};
    // Phase convention: the largest-magnitude component of each column is real-positive.
    for (Index c = 0; c < out.eigenvectors.cols(); ++c) {
        Index imax = 0;
        out.eigenvectors.col(c).cwiseAbs().maxCoeff(&imax);
        const Complex pivot = out.eigenvectors(imax, c);
        if (std::abs(pivot) > 0.0) {
            out.eigenvectors.col(c) *= std::conj(pivot) / std::abs(pivot);
            out.eigenvectors(imax, c) = std::abs(pivot);
        }
    }
    return out;
}

EigenDecomposition eig_hermitian(const Operator& h) { return eig_hermitian(h.matrix()); }

Matrix lindblad(const Matrix& a, const Matrix& rho) {
    const Matrix ad = a.adjoint();
    const Matrix ada = ad * a;
    return 2.0 * a * rho * ad - ada * rho - rho * ada;
}

Matrix lindblad(const Operator& a, const DensityMatrix& rho) {
    require_same_space(a.space(), rho.space());
    return lindblad(a.matrix(), rho.matrix());
}

Complex expectation(const Matrix& a, const Matrix& rho) {
    // Tr[A rho] = sum_ij A_ij rho_ji
    return (a.transpose().cwiseProduct(rho)).sum();
}

Complex expectation(const Operator& a, const DensityMatrix& rho) {
    require_same_space(a.space(), rho.space());
    return expectation(a.matrix(), rho.matrix());
}

double hermiticity_error(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

double min_eigenvalue(const Matrix& hermitian) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(hermitian, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

namespace local {

Matrix identity(Index n) { return Matrix::Identity(n, n); }

Matrix destroy(Index n_levels) {
    Matrix a = Matrix::Zero(n_levels, n_levels);
    for (Index n = 1; n < n_levels; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
    return a;
}

Matrix projector(Index n, Index i, Index j) {
    Matrix p = Matrix::Zero(n, n);
    p(i, j) = 1.0;
    return p;
}

} // namespace local

} // namespace qdsps::algebra
