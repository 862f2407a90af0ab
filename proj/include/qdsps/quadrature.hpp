#pragma once

// Adaptive Simpson quadrature for smooth real-, complex- or vector-valued
// integrands. Vector integrands share one mesh, refined until the max-norm of
// the error estimate meets the tolerance.

#include <cmath>
#include <complex>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace qdsps::quad {

template <typename T>
struct Result {
    T value{};
    double error_estimate{0.0};
    bool converged{true};
    long evaluations{0};
};

namespace detail {

template <typename T>
double magnitude(const T& v) {
    if constexpr (std::is_arithmetic_v<T> || std::is_same_v<T, std::complex<double>>)
        return std::abs(v);
    else
        return v.cwiseAbs().maxCoeff();  // Eigen vectors: max-norm
}

template <typename F, typename T>
void simpson_recurse(F& f, double a, double b, T fa, T fm, T fb, T whole, double tol, int depth, Result<T>& out) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const T flm = f(lm);
    const T frm = f(rm);
    out.evaluations += 2;
    const double h = b - a;
    const T left = (h / 12.0) * (fa + 4.0 * flm + fm);
    const T right = (h / 12.0) * (fm + 4.0 * frm + fb);
    const T delta = left + right - whole;
    const double err = magnitude(delta) / 15.0;
    if (err <= tol || depth <= 0) {
        if (err > tol) out.converged = false;
        out.value += left + right + delta / 15.0;
        out.error_estimate += err;
        return;
    }
    simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, out);
    simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, out);
}

} // namespace detail

// Integrates f over [a, b] split into `panels` equal panels, each refined
// adaptively until the Richardson error estimate falls below its share of
// abs_tol. `converged` is false if any panel hit max_depth first.
template <typename F>
auto adaptive_simpson(F&& f, double a, double b, double abs_tol, int max_depth = 40, int panels = 16)
    -> Result<std::decay_t<decltype(f(a))>> {
    using T = std::decay_t<decltype(f(a))>;
    Result<T> out;
    const double width = (b - a) / panels;
    T f_left = f(a);
    out.value = 0.0 * f_left;
    out.evaluations += 1;
    for (int p = 0; p < panels; ++p) {
        const double pa = a + p * width;
        const double pb = (p + 1 == panels) ? b : pa + width;
        const T fm = f(0.5 * (pa + pb));
        const T fb = f(pb);
        out.evaluations += 2;
        const T whole = ((pb - pa) / 6.0) * (f_left + 4.0 * fm + fb);
        detail::simpson_recurse(f, pa, pb, f_left, fm, fb, whole, abs_tol / panels, max_depth, out);
        f_left = fb;
    }
    return out;
}


// Vector-valued variant writing f(x) into caller-provided storage:
// f(double x, Eigen::VectorXcd& out). Work vectors come from a pool that is
// reused across the whole recursion, so no allocation happens per node.
template <typename F>
Result<Eigen::VectorXcd> adaptive_simpson_vector(F&& f, Eigen::Index n, double a, double b, double abs_tol,
                                                 int max_depth = 40, int panels = 16) {
    using V = Eigen::VectorXcd;
    std::vector<V> pool;
    std::vector<int> free_slots;
    auto acquire = [&]() {
        if (!free_slots.empty()) {
            const int i = free_slots.back();
            free_slots.pop_back();
            return i;
        }
        pool.emplace_back(n);
        return static_cast<int>(pool.size()) - 1;
    };
    auto release = [&](int i) { free_slots.push_back(i); };

    Result<V> out;
    out.value = V::Zero(n);

    auto recurse = [&](auto&& self, double lo, double hi, int ia, int im, int ib, int iw, double tol, int depth) -> void {
        const double mid = 0.5 * (lo + hi);
        const int il = acquire();
        f(0.5 * (lo + mid), pool[il]);
        const int ir = acquire();
        f(0.5 * (mid + hi), pool[ir]);
        out.evaluations += 2;
        const double h = hi - lo;
        const int left = acquire();
        pool[left] = (h / 12.0) * (pool[ia] + 4.0 * pool[il] + pool[im]);
        const int right = acquire();
        pool[right] = (h / 12.0) * (pool[im] + 4.0 * pool[ir] + pool[ib]);
        const int delta = acquire();
        pool[delta] = pool[left] + pool[right] - pool[iw];
        const double err = pool[delta].cwiseAbs().maxCoeff() / 15.0;
        if (err <= tol || depth <= 0) {
            if (err > tol) out.converged = false;
            out.value += pool[left] + pool[right] + pool[delta] / 15.0;
            out.error_estimate += err;
            for (int i : {il, ir, left, right, delta}) release(i);
            return;
        }
        release(delta);
        self(self, lo, mid, ia, il, im, left, 0.5 * tol, depth - 1);
        release(il);
        release(left);
        self(self, mid, hi, im, ir, ib, right, 0.5 * tol, depth - 1);
        release(ir);
        release(right);
    };

    const double width = (b - a) / panels;
    int i_left = acquire();
    f(a, pool[i_left]);
    out.evaluations += 1;
    for (int p = 0; p < panels; ++p) {
        const double pa = a + p * width;
        const double pb = (p + 1 == panels) ? b : pa + width;
        const int im = acquire();
        f(0.5 * (pa + pb), pool[im]);
        const int ib = acquire();
        f(pb, pool[ib]);
        out.evaluations += 2;
        const int iw = acquire();
        pool[iw] = ((pb - pa) / 6.0) * (pool[i_left] + 4.0 * pool[im] + pool[ib]);
        recurse(recurse, pa, pb, i_left, im, ib, iw, abs_tol / panels, max_depth);
        release(iw);
        release(im);
        release(i_left);
        i_left = ib;
    }
    return out;
}

} // namespace qdsps::quad
