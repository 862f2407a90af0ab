#pragma once

// Dense complex linear algebra over small composite Hilbert spaces.
//
// Basis ordering for composite spaces is row-major in the factors: the first
// factor (the quantum dot) is the slowest index, the last factor (the cavity
// Fock index) the fastest. kron(A, B) follows the same convention.

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qdsps {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr Complex I_unit{0.0, 1.0};

// Numerical failure inside the engine (non-convergence, NaN, trace drift).
class EngineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace qdsps

namespace qdsps::algebra {

class HilbertSpace {
public:
    HilbertSpace() = default;
    explicit HilbertSpace(std::vector<Index> factor_dims);

    const std::vector<Index>& factor_dims() const { return factor_dims_; }
    Index total_dim() const { return total_dim_; }

    // Tensor product space; factors of *this come first (major).
    HilbertSpace tensor(const HilbertSpace& other) const;

    // Flat basis index of a product state, one entry per factor.
    Index basis_index(const std::vector<Index>& labels) const;

    bool operator==(const HilbertSpace& other) const = default;

private:
    std::vector<Index> factor_dims_;
    Index total_dim_{0};
};

class Operator {
public:
    Operator() = default;
    Operator(HilbertSpace space, Matrix elements);

    static Operator identity(const HilbertSpace& space);
    static Operator zero(const HilbertSpace& space);

    const HilbertSpace& space() const { return space_; }
    const Matrix& matrix() const { return elements_; }
    Index dim() const { return space_.total_dim(); }

    Operator dagger() const;
    bool is_hermitian(double tol = 1e-10) const;

    Operator operator+(const Operator& rhs) const;
    Operator operator-(const Operator& rhs) const;
    Operator operator*(const Operator& rhs) const;
    Operator operator*(Complex s) const;
    friend Operator operator*(Complex s, const Operator& op) { return op * s; }

private:
    HilbertSpace space_;
    Matrix elements_;
};

// Hermitian, unit-trace state. Construction validates Hermiticity (1e-10
// elementwise) and the trace (1e-8); positivity is checked separately since
// second-order master equations are not guaranteed to preserve it.
class DensityMatrix {
public:
    DensityMatrix() = default;
    DensityMatrix(HilbertSpace space, Matrix elements);

    // |basis><basis| for the product state with the given factor labels.
    static DensityMatrix basis_state(const HilbertSpace& space, const std::vector<Index>& labels);

    const HilbertSpace& space() const { return space_; }
    const Matrix& matrix() const { return elements_; }
    Index dim() const { return space_.total_dim(); }

private:
    HilbertSpace space_;
    Matrix elements_;
};

struct EigenDecomposition {
    RealVector eigenvalues; // ascending
    Matrix eigenvectors;    // columns; largest-magnitude component real-positive
};

Operator kron(const Operator& a, const Operator& b);
Matrix kron(const Matrix& a, const Matrix& b);

// Throws std::invalid_argument when max|H - H^dagger| exceeds 1e-10 * max(1, max|H|).
EigenDecomposition eig_hermitian(const Operator& h);
EigenDecomposition eig_hermitian(const Matrix& h);

// 2 A rho A^dagger - A^dagger A rho - rho A^dagger A
Matrix lindblad(const Operator& a, const DensityMatrix& rho);
Matrix lindblad(const Matrix& a, const Matrix& rho);

// Tr[A rho]
Complex expectation(const Operator& a, const DensityMatrix& rho);
Complex expectation(const Matrix& a, const Matrix& rho);

double hermiticity_error(const Matrix& m);
double min_eigenvalue(const Matrix& hermitian);

// Single-factor building blocks.
namespace local {
Matrix identity(Index n);
Matrix destroy(Index n_levels); // a on a Fock space truncated at n_levels - 1 photons
Matrix projector(Index n, Index i, Index j); // |i><j|
} // namespace local

} // namespace qdsps::algebra
