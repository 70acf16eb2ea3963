#pragma once

// Shared test utilities. The reference algorithms here are deliberately
// different routes than the library code they check: singular values come
// from a two-sided Jacobi eigensolver on A^T A, determinants from an LU
// factorization, derivatives from central differences.

#include <cmath>
#include <functional>
#include <vector>

#include "ndmd/matrix.hpp"
#include "ndmd/rng.hpp"

namespace testutil {

using ndmd::complexd;
using ndmd::RealMatrix;
using ndmd::Rng;

inline RealMatrix gaussian_matrix(Rng& rng, int m, int n, double s = 1.0) {
    RealMatrix a(m, n);
    for (double& v : a.data) v = s * rng.normal();
    return a;
}

/// Random orthogonal matrix by modified Gram-Schmidt (two passes) on a
/// Gaussian matrix. Independent of the library's factorizations.
inline RealMatrix random_orthogonal(Rng& rng, int n) {
    RealMatrix g = gaussian_matrix(rng, n, n);
    for (int j = 0; j < n; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < j; ++k) {
                double dot = 0.0;
                for (int i = 0; i < n; ++i) dot += g(i, k) * g(i, j);
                for (int i = 0; i < n; ++i) g(i, j) -= dot * g(i, k);
            }
        }
        double nrm = 0.0;
        for (int i = 0; i < n; ++i) nrm += g(i, j) * g(i, j);
        nrm = std::sqrt(nrm);
        for (int i = 0; i < n; ++i) g(i, j) /= nrm;
    }
    return g;
}

/// A = U diag(sig) V^T with random orthogonal factors.
inline RealMatrix matrix_with_singular_values(Rng& rng, int m, int n,
                                              const std::vector<double>& sig) {
    const int k = int(sig.size());
    RealMatrix u = random_orthogonal(rng, m);
    RealMatrix v = random_orthogonal(rng, n);
    RealMatrix a(m, n);
    for (int t = 0; t < k; ++t)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) a(i, j) += sig[t] * u(i, t) * v(j, t);
    return a;
}

/// Solve a real square system by promoting to the complex solver.
inline RealMatrix real_solve(const RealMatrix& a, const RealMatrix& b) {
    return ndmd::real_part(ndmd::csolve(ndmd::promote(a), ndmd::promote(b)));
}

/// Real matrix with the given spectrum. Conjugate pairs must be passed
/// adjacently with the +Im member first; the matrix is a well-conditioned
/// similarity transform of the real block-diagonal canonical form.
inline RealMatrix matrix_with_eigenvalues(Rng& rng, const std::vector<complexd>& lam) {
    const int n = int(lam.size());
    RealMatrix b(n, n);
    int i = 0;
    while (i < n) {
        if (lam[i].imag() == 0.0) {
            b(i, i) = lam[i].real();
            i += 1;
        } else {
            b(i, i) = lam[i].real();
            b(i, i + 1) = lam[i].imag();
            b(i + 1, i) = -lam[i].imag();
            b(i + 1, i + 1) = lam[i].real();
            i += 2;
        }
    }
    RealMatrix g = gaussian_matrix(rng, n, n);
    const double f = 0.4 / ndmd::frobenius_norm(g);
    RealMatrix t = RealMatrix::identity(n);
    for (std::size_t s = 0; s < t.data.size(); ++s) t.data[s] += f * g.data[s];
    // A = T B T^{-1}, solved as A T = T B
    return ndmd::transpose(real_solve(ndmd::transpose(t), ndmd::transpose(ndmd::matmul(t, b))));
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations.
/// Returned descending.
inline std::vector<double> symmetric_eigenvalues(RealMatrix s) {
    const int n = s.rows;
    const double fro = ndmd::frobenius_norm(s);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += 2.0 * s(p, q) * s(p, q);
        if (std::sqrt(off) <= 1e-13 * (fro > 0.0 ? fro : 1.0)) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (s(p, q) == 0.0) continue;
                const double zeta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = c * t;
                for (int j = 0; j < n; ++j) {
                    const double xp = s(p, j), xq = s(q, j);
                    s(p, j) = c * xp - sn * xq;
                    s(q, j) = sn * xp + c * xq;
                }
                for (int i = 0; i < n; ++i) {
                    const double xp = s(i, p), xq = s(i, q);
                    s(i, p) = c * xp - sn * xq;
                    s(i, q) = sn * xp + c * xq;
                }
            }
        }
    }
    std::vector<double> lam(n);
    for (int i = 0; i < n; ++i) lam[i] = s(i, i);
    std::sort(lam.begin(), lam.end(), std::greater<double>());
    return lam;
}

/// Reference singular values: square roots of the eigenvalues of A^T A
/// (or A A^T, whichever is smaller).
inline std::vector<double> reference_singular_values(const RealMatrix& a) {
    const RealMatrix g = (a.rows >= a.cols)
                             ? ndmd::matmul(ndmd::transpose(a), a)
                             : ndmd::matmul(a, ndmd::transpose(a));
    std::vector<double> lam = symmetric_eigenvalues(g);
    for (double& v : lam) v = std::sqrt(std::max(v, 0.0));
    return lam;
}

/// Determinant by LU with partial pivoting.
inline double determinant(RealMatrix a) {
    const int n = a.rows;
    double d = 1.0;
    for (int k = 0; k < n; ++k) {
        int p = k;
        for (int i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
        if (a(p, k) == 0.0) return 0.0;
        if (p != k) {
            for (int j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
            d = -d;
        }
        d *= a(k, k);
        for (int i = k + 1; i < n; ++i) {
            const double f = a(i, k) / a(k, k);
            for (int j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
        }
    }
    return d;
}

/// Central-difference gradient of a scalar function of a matrix.
inline RealMatrix fd_gradient(const RealMatrix& a,
                              const std::function<double(const RealMatrix&)>& f,
                              double h = 1e-6) {
    RealMatrix g(a.rows, a.cols);
    RealMatrix x = a;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double save = x.data[i];
        x.data[i] = save + h;
        const double fp = f(x);
        x.data[i] = save - h;
        const double fm = f(x);
        x.data[i] = save;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Relative difference between two gradients, measured in Frobenius norm.
inline double rel_diff(const RealMatrix& a, const RealMatrix& b) {
    const double denom = std::max({ndmd::frobenius_norm(a), ndmd::frobenius_norm(b), 1e-300});
    return ndmd::frobenius_norm(ndmd::sub(a, b)) / denom;
}

}  // namespace testutil
