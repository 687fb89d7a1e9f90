#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/tensor.hpp"

namespace bcglm {

namespace detail {

inline void require_matrix(const Tensor& a, const char* where) {
    if (a.rank() != 2) throw Error(Errc::ShapeMismatch, where, "expected a matrix, got " + shape_string(a.shape()));
}

inline void require_square(const Tensor& a, const char* where) {
    require_matrix(a, where);
    if (a.rows() != a.cols()) throw Error(Errc::ShapeMismatch, where, "matrix not square: " + shape_string(a.shape()));
}

} // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw Error(Errc::ShapeMismatch, "matmul", shape_string(a.shape()) + " x " + shape_string(b.shape()));
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = &c(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            const double* brow = &b(p, 0);
            for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose");
    Tensor t({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline std::vector<double> matvec(const Tensor& a, std::span<const double> x) {
    detail::require_matrix(a, "matvec");
    if (a.cols() != x.size()) throw Error(Errc::ShapeMismatch, "matvec", "vector length mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// AᵀA for an N×q matrix, optionally with per-row weights.
inline Tensor gram(const Tensor& a, std::span<const double> weights = {}) {
    detail::require_matrix(a, "gram");
    const std::size_t n = a.rows(), q = a.cols();
    Tensor g({q, q});
    for (std::size_t r = 0; r < n; ++r) {
        const double w = weights.empty() ? 1.0 : weights[r];
        const double* row = &a(r, 0);
        for (std::size_t i = 0; i < q; ++i) {
            const double wi = w * row[i];
            if (wi == 0.0) continue;
            double* grow = &g(i, 0);
            for (std::size_t j = 0; j <= i; ++j) grow[j] += wi * row[j];
        }
    }
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < i; ++j) g(j, i) = g(i, j);
    return g;
}

struct CholeskyResult {
    Tensor lower;
    double jitter = 0.0; // absolute diagonal shift that made the factorization succeed
};

namespace detail {

// Plain Cholesky; returns false on a non-positive pivot.
inline bool cholesky_in_place(Tensor& l, double shift) {
    const std::size_t n = l.rows();
    for (std::size_t j = 0; j < n; ++j) {
        double* lj = &l(j, 0);
        double d = lj[j] + shift;
        for (std::size_t k = 0; k < j; ++k) d -= lj[k] * lj[k];
        if (!(d > 0.0) || !std::isfinite(d)) return false;
        const double ljj = std::sqrt(d);
        lj[j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double* li = &l(i, 0);
            double s = li[j];
            for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
            li[j] = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) l(i, j) = 0.0;
    return true;
}

} // namespace detail

/// Cholesky factor of a symmetric positive definite matrix.
///
/// Tries diagonal shifts of 0, 1e-10, 1e-8 and 1e-6 times trace/n in turn and
/// reports the shift that succeeded. Symmetry is checked to 1e-10 relative.
inline CholeskyResult cholesky(const Tensor& a) {
    detail::require_square(a, "cholesky");
    const std::size_t n = a.rows();
    double scale = 0.0, trace = 0.0;
    for (double v : a.data()) scale = std::max(scale, std::fabs(v));
    for (std::size_t i = 0; i < n; ++i) trace += a(i, i);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (std::fabs(a(i, j) - a(j, i)) > 1e-10 * std::max(scale, 1e-300))
                throw Error(Errc::ShapeMismatch, "cholesky", "matrix is not symmetric");
    const double base = trace / static_cast<double>(n);
    for (double rel : {0.0, 1e-10, 1e-8, 1e-6}) {
        if (rel > 0.0 && !(base > 0.0)) break;
        Tensor l = a;
        const double shift = rel * base;
        if (detail::cholesky_in_place(l, shift)) return {std::move(l), shift};
    }
    throw Error(Errc::NotPositiveDefinite, "cholesky",
                "pivot <= 0 for " + shape_string(a.shape()) + " after jitter up to 1e-6*trace/n");
}

/// Solves L x = b for lower-triangular L.
inline std::vector<double> solve_lower(const Tensor& l, std::span<const double> b) {
    const std::size_t n = l.rows();
    std::vector<double> x(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        double s = x[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

/// Solves Lᵀ x = b for lower-triangular L.
inline std::vector<double> solve_upper_t(const Tensor& l, std::span<const double> b) {
    const std::size_t n = l.rows();
    std::vector<double> x(b.begin(), b.end());
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

inline std::vector<double> cholesky_solve(const Tensor& l, std::span<const double> b) {
    return solve_upper_t(l, solve_lower(l, b));
}

/// Inverse of an SPD matrix from its Cholesky factor.
inline Tensor spd_inverse_from_factor(const Tensor& l) {
    const std::size_t n = l.rows();
    Tensor inv({n, n});
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        const auto col = cholesky_solve(l, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double avg = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = avg;
            inv(j, i) = avg;
        }
    return inv;
}

inline Tensor spd_inverse(const Tensor& a) { return spd_inverse_from_factor(cholesky(a).lower); }

struct SymmetricEigen {
    std::vector<double> values; // descending
    Tensor vectors;             // columns are eigenvectors
};

/// Cyclic Jacobi eigensolver; intended for the small (k ≲ 100) covariance
/// matrices that show up in feature summaries.
inline SymmetricEigen symmetric_eigen(const Tensor& a) {
    detail::require_square(a, "symmetric_eigen");
    const std::size_t n = a.rows();
    Tensor m = a;
    Tensor v = Tensor::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += m(i, j) * m(i, j);
                if (i != j) off += m(i, j) * m(i, j);
            }
        if (off <= 1e-30 * std::max(total, 1e-300)) break;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (apq == 0.0) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return m(x, x) > m(y, y); });
    SymmetricEigen out{std::vector<double>(n), Tensor({n, n})};
    for (std::size_t c = 0; c < n; ++c) {
        out.values[c] = m(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = v(r, order[c]);
    }
    return out;
}

} // namespace bcglm
