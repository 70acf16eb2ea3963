#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ndmd/errors.hpp"
#include "ndmd/matrix.hpp"

namespace ndmd {

/// Counters for the gradient degeneracy guards. Near-coincident spectra make
/// the exact decomposition derivatives unbounded; we clamp instead of
/// propagating infinities, and keep score so callers can surface it.
struct ClampStats {
    long long f_clamped = 0;     // spectral-gap denominators clamped
    long long sigma_dropped = 0; // singular-value reciprocals zeroed
};

/// Thin SVD truncated to `rank` terms: A ~ U diag(sigma) V^T with
/// U (m x rank), sigma descending, V (n x rank).
struct SvdResult {
    RealMatrix U;
    std::vector<double> sigma;
    RealMatrix V;
    int rank = 0;
};

/// How many singular triplets to keep.
struct RankSpec {
    enum class Kind { full, fixed, threshold };
    Kind kind = Kind::full;
    int r = 0;
    double frac = 0.0;

    static RankSpec full() { return RankSpec{}; }
    static RankSpec fixed(int r) {
        require(r > 0, "RankSpec::fixed: rank must be positive");
        return RankSpec{Kind::fixed, r, 0.0};
    }
    /// Keep sigma_i with sigma_i > frac * sigma_1.
    static RankSpec threshold(double frac) {
        require(frac >= 0.0 && frac < 1.0, "RankSpec::threshold: need 0 <= frac < 1");
        return RankSpec{Kind::threshold, 0, frac};
    }
};

namespace detail {

/// One-sided Jacobi, operating on rows. Row i of c holds the i-th column of
/// the original matrix, so the hot loops run over contiguous memory. Rotations
/// are accumulated into w (starts as identity); on exit w equals V^T.
inline void jacobi_orthogonalize_rows(RealMatrix& c, RealMatrix& w) {
    const int n = c.rows, m = c.cols;
    const double tol = 1e-14;
    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                const double* rp = &c.data[std::size_t(p) * m];
                const double* rq = &c.data[std::size_t(q) * m];
                for (int j = 0; j < m; ++j) {
                    app += rp[j] * rp[j];
                    aqq += rq[j] * rq[j];
                    apq += rp[j] * rq[j];
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                double* mp = &c.data[std::size_t(p) * m];
                double* mq = &c.data[std::size_t(q) * m];
                for (int j = 0; j < m; ++j) {
                    const double xp = mp[j], xq = mq[j];
                    mp[j] = cs * xp - sn * xq;
                    mq[j] = sn * xp + cs * xq;
                }
                double* wp = &w.data[std::size_t(p) * n];
                double* wq = &w.data[std::size_t(q) * n];
                for (int j = 0; j < n; ++j) {
                    const double xp = wp[j], xq = wq[j];
                    wp[j] = cs * xp - sn * xq;
                    wq[j] = sn * xp + cs * xq;
                }
            }
        }
        if (!rotated) return;
    }
    throw numeric_failure("svd: Jacobi iteration did not converge");
}

/// Replace column j of u (all entries currently meaningless) with a unit
/// vector orthogonal to columns [0, j). Candidates are canonical basis
/// vectors, twice re-orthogonalized; deterministic.
inline void complete_column(RealMatrix& u, int j) {
    const int m = u.rows;
    for (int cand = 0; cand < m; ++cand) {
        std::vector<double> v(m, 0.0);
        v[cand] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < j; ++k) {
                double dot = 0.0;
                for (int i = 0; i < m; ++i) dot += u(i, k) * v[i];
                for (int i = 0; i < m; ++i) v[i] -= dot * u(i, k);
            }
        }
        double nrm = 0.0;
        for (double x : v) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm > 0.1) {
            for (int i = 0; i < m; ++i) u(i, j) = v[i] / nrm;
            return;
        }
    }
    throw numeric_failure("svd: failed to complete orthonormal basis");
}

}  // namespace detail

namespace detail {

/// Thin SVD core for m >= n; no sign convention applied yet.
inline SvdResult svd_core(const RealMatrix& a) {
    const int m = a.rows, n = a.cols;

    RealMatrix c = transpose(a);  // n x m, row i = column i of a
    RealMatrix w = RealMatrix::identity(n);
    detail::jacobi_orthogonalize_rows(c, w);

    std::vector<double> sig(n);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += c(i, j) * c(i, j);
        sig[i] = std::sqrt(s);
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return sig[x] > sig[y]; });

    SvdResult out;
    out.rank = n;
    out.U = RealMatrix(m, n);
    out.V = RealMatrix(n, n);
    out.sigma.resize(n);
    for (int jj = 0; jj < n; ++jj) {
        const int src = order[jj];
        out.sigma[jj] = sig[src];
        if (sig[src] > 0.0) {
            for (int i = 0; i < m; ++i) out.U(i, jj) = c(src, i) / sig[src];
        } else {
            detail::complete_column(out.U, jj);
        }
        for (int i = 0; i < n; ++i) out.V(i, jj) = w(src, i);  // V = w^T
    }
    return out;
}

}  // namespace detail

/// Full thin SVD of a (m x n): U is m x k, V is n x k with k = min(m, n).
/// Singular values descending; each left vector's largest-magnitude entry is
/// made positive so the factorization is deterministic.
inline SvdResult svd_thin(const RealMatrix& a) {
    require(a.rows > 0 && a.cols > 0, "svd_thin: empty matrix");
    a.check_finite("svd_thin");
    SvdResult out;
    if (a.rows >= a.cols) {
        out = detail::svd_core(a);
    } else {
        out = detail::svd_core(transpose(a));
        std::swap(out.U, out.V);
    }
    for (int j = 0; j < out.rank; ++j) {
        int arg = 0;
        double best = -1.0;
        for (int i = 0; i < out.U.rows; ++i) {
            const double v = std::abs(out.U(i, j));
            if (v > best) { best = v; arg = i; }
        }
        if (out.U(arg, j) < 0.0) {
            for (int i = 0; i < out.U.rows; ++i) out.U(i, j) = -out.U(i, j);
            for (int i = 0; i < out.V.rows; ++i) out.V(i, j) = -out.V(i, j);
        }
    }
    return out;
}

/// Thin SVD truncated per spec. A threshold spec keeps the triplets with
/// sigma_i > frac * sigma_1 (at least one when the matrix is nonzero).
inline SvdResult svd_truncated(const RealMatrix& a, const RankSpec& spec) {
    SvdResult full = svd_thin(a);
    int keep = full.rank;
    switch (spec.kind) {
        case RankSpec::Kind::full:
            break;
        case RankSpec::Kind::fixed:
            require(spec.r <= full.rank,
                    "svd_truncated: requested rank exceeds min(m, n)");
            keep = spec.r;
            break;
        case RankSpec::Kind::threshold: {
            const double cut = spec.frac * full.sigma[0];
            keep = 0;
            while (keep < full.rank && full.sigma[keep] > cut) ++keep;
            break;
        }
    }
    if (keep == full.rank) return full;
    SvdResult out;
    out.rank = keep;
    out.sigma.assign(full.sigma.begin(), full.sigma.begin() + keep);
    out.U = col_slice(full.U, 0, keep);
    out.V = col_slice(full.V, 0, keep);
    return out;
}

/// U diag(sigma) V^T.
inline RealMatrix svd_reconstruct(const SvdResult& s) {
    return matmul(scale_cols(s.U, s.sigma), transpose(s.V));
}

/// Moore-Penrose pseudoinverse. Singular values at or below
/// rcond * sigma_1 are treated as zero.
inline RealMatrix pinv(const RealMatrix& a, double rcond = 1e-10) {
    SvdResult s = svd_thin(a);
    const double cut = s.sigma.empty() ? 0.0 : rcond * s.sigma[0];
    std::vector<double> inv(s.sigma.size(), 0.0);
    for (std::size_t i = 0; i < s.sigma.size(); ++i)
        if (s.sigma[i] > cut && s.sigma[i] > 0.0) inv[i] = 1.0 / s.sigma[i];
    return matmul(scale_cols(s.V, inv), transpose(s.U));
}

/// Complex pseudoinverse through the real embedding
/// X + iY -> [[X, -Y], [Y, X]], which commutes with the pseudoinverse.
inline ComplexMatrix cpinv(const ComplexMatrix& a, double rcond = 1e-10) {
    const int m = a.rows, n = a.cols;
    RealMatrix e(2 * m, 2 * n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const complexd v = a(i, j);
            e(i, j) = v.real();
            e(i, n + j) = -v.imag();
            e(m + i, j) = v.imag();
            e(m + i, n + j) = v.real();
        }
    }
    RealMatrix ep = pinv(e, rcond);
    ComplexMatrix out(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out(i, j) = complexd(ep(i, j), ep(n + i, j));
    return out;
}

/// Reverse-mode derivative of the truncated thin SVD, applied at the rank of
/// `s`. Null adjoint pointers mean zero. Gap denominators 1/(sigma_j^2 -
/// sigma_i^2) are clamped to magnitude >= 1e-6 (sign preserved) and
/// reciprocals of sigma_i < 1e-12 * sigma_1 are zeroed; both events are
/// counted in `stats` when given.
inline RealMatrix svd_backward(const SvdResult& s,
                               const RealMatrix* gU,
                               const std::vector<double>* gS,
                               const RealMatrix* gV,
                               ClampStats* stats = nullptr) {
    const int m = s.U.rows, n = s.V.rows, r = s.rank;
    require(r > 0, "svd_backward: empty decomposition");
    if (gU) require(gU->rows == m && gU->cols == r, "svd_backward: gU shape");
    if (gV) require(gV->rows == n && gV->cols == r, "svd_backward: gV shape");
    if (gS) require(int(gS->size()) == r, "svd_backward: gS length");

    const double sigma1 = s.sigma[0];
    std::vector<double> sig_inv(r, 0.0);
    for (int i = 0; i < r; ++i) {
        if (s.sigma[i] < 1e-12 * sigma1 || s.sigma[i] == 0.0) {
            if (stats) ++stats->sigma_dropped;
        } else {
            sig_inv[i] = 1.0 / s.sigma[i];
        }
    }
    RealMatrix f(r, r);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
            if (i == j) continue;
            double d = s.sigma[j] * s.sigma[j] - s.sigma[i] * s.sigma[i];
            if (std::abs(d) < 1e-6) {
                d = (d >= 0.0 ? 1e-6 : -1e-6);
                if (stats) ++stats->f_clamped;
            }
            f(i, j) = 1.0 / d;
        }
    }

    RealMatrix mid(r, r);
    RealMatrix grad(m, n);
    if (gU) {
        RealMatrix p = matmul(transpose(s.U), *gU);      // r x r
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j)
                mid(i, j) += f(i, j) * (p(i, j) - p(j, i)) * s.sigma[j];
        RealMatrix k1 = sub(*gU, matmul(s.U, p));        // (I - U U^T) gU
        grad = add(grad, matmul(scale_cols(k1, sig_inv), transpose(s.V)));
    }
    if (gV) {
        RealMatrix q = matmul(transpose(s.V), *gV);      // r x r
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j)
                mid(i, j) += s.sigma[i] * f(i, j) * (q(i, j) - q(j, i));
        RealMatrix k2 = sub(*gV, matmul(s.V, q));        // (I - V V^T) gV
        grad = add(grad, matmul(scale_cols(s.U, sig_inv), transpose(k2)));
    }
    if (gS)
        for (int i = 0; i < r; ++i) mid(i, i) += (*gS)[i];
    grad = add(grad, matmul(s.U, matmul(mid, transpose(s.V))));
    return grad;
}

}  // namespace ndmd
