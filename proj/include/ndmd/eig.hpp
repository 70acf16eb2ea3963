#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ndmd/errors.hpp"
#include "ndmd/matrix.hpp"
#include "ndmd/svd.hpp"

namespace ndmd {

/// Eigendecomposition A Y = Y diag(lambda) of a real square matrix.
/// Eigenvalues are sorted by descending modulus, ties by descending real
/// part, then positive imaginary part first, so conjugate pairs sit next to
/// each other. Columns of Y are unit vectors whose largest-modulus entry is
/// real and positive.
struct EigResult {
    std::vector<complexd> lambda;
    ComplexMatrix Y;
};

namespace detail {

inline double sign_like(double a, double b) { return b >= 0.0 ? std::abs(a) : -std::abs(a); }

/// Householder reduction to upper Hessenberg form, H = Q^T A Q, with Q
/// accumulated. h is reduced in place; entries below the subdiagonal are
/// zeroed exactly.
inline void hessenberg(RealMatrix& h, RealMatrix& q) {
    const int n = h.rows;
    q = RealMatrix::identity(n);
    std::vector<double> v(n, 0.0);
    for (int k = 0; k < n - 2; ++k) {
        double xnorm = 0.0;
        for (int i = k + 1; i < n; ++i) xnorm += h(i, k) * h(i, k);
        xnorm = std::sqrt(xnorm);
        if (xnorm == 0.0) continue;
        const double alpha = h(k + 1, k) >= 0.0 ? -xnorm : xnorm;
        v[k + 1] = h(k + 1, k) - alpha;
        for (int i = k + 2; i < n; ++i) v[i] = h(i, k);
        double vnorm2 = 0.0;
        for (int i = k + 1; i < n; ++i) vnorm2 += v[i] * v[i];
        if (vnorm2 == 0.0) continue;
        const double beta = 2.0 / vnorm2;
        for (int j = k; j < n; ++j) {  // rows k+1.. from the left
            double s = 0.0;
            for (int i = k + 1; i < n; ++i) s += v[i] * h(i, j);
            s *= beta;
            for (int i = k + 1; i < n; ++i) h(i, j) -= s * v[i];
        }
        for (int i = 0; i < n; ++i) {  // columns k+1.. from the right
            double s = 0.0;
            for (int j = k + 1; j < n; ++j) s += h(i, j) * v[j];
            s *= beta;
            for (int j = k + 1; j < n; ++j) h(i, j) -= s * v[j];
        }
        for (int i = 0; i < n; ++i) {  // Q accumulates the right factors
            double s = 0.0;
            for (int j = k + 1; j < n; ++j) s += q(i, j) * v[j];
            s *= beta;
            for (int j = k + 1; j < n; ++j) q(i, j) -= s * v[j];
        }
        h(k + 1, k) = alpha;
        for (int i = k + 2; i < n; ++i) h(i, k) = 0.0;
    }
    for (int i = 2; i < n; ++i)
        for (int j = 0; j <= i - 2; ++j) h(i, j) = 0.0;
}

/// Francis double-shift QR on an upper Hessenberg matrix. Destroys h and
/// fills w with the eigenvalues. Exceptional shifts after 10 and 20 stalled
/// iterations; failure after 30 per deflation.
inline void hqr_eigenvalues(RealMatrix& h, std::vector<complexd>& w) {
    const int n = h.rows;
    const double eps = std::numeric_limits<double>::epsilon();
    w.assign(n, complexd(0.0, 0.0));

    double anorm = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::abs(h(i, j));

    int nn = n - 1;
    double t = 0.0;
    while (nn >= 0) {
        int its = 0;
        int l;
        do {
            for (l = nn; l >= 1; --l) {
                double s = std::abs(h(l - 1, l - 1)) + std::abs(h(l, l));
                if (s == 0.0) s = anorm;
                if (std::abs(h(l, l - 1)) <= eps * s) {
                    h(l, l - 1) = 0.0;
                    break;
                }
            }
            double x = h(nn, nn);
            if (l == nn) {
                w[nn--] = complexd(x + t, 0.0);
            } else {
                double y = h(nn - 1, nn - 1);
                double ww = h(nn, nn - 1) * h(nn - 1, nn);
                if (l == nn - 1) {
                    double p = 0.5 * (y - x);
                    double q = p * p + ww;
                    double z = std::sqrt(std::abs(q));
                    x += t;
                    if (q >= 0.0) {
                        z = p + sign_like(z, p);
                        double r1 = x + z;
                        double r2 = (z != 0.0) ? x - ww / z : r1;
                        w[nn - 1] = complexd(r1, 0.0);
                        w[nn] = complexd(r2, 0.0);
                    } else {
                        w[nn - 1] = complexd(x + p, z);
                        w[nn] = complexd(x + p, -z);
                    }
                    nn -= 2;
                } else {
                    if (its == 30)
                        throw numeric_failure("eig: QR iteration exceeded 30 steps per eigenvalue");
                    if (its == 10 || its == 20) {
                        t += x;
                        for (int i = 0; i <= nn; ++i) h(i, i) -= x;
                        double s = std::abs(h(nn, nn - 1)) + std::abs(h(nn - 1, nn - 2));
                        y = x = 0.75 * s;
                        ww = -0.4375 * s * s;
                    }
                    ++its;
                    int m;
                    double p = 0.0, q = 0.0, r = 0.0, z = 0.0;
                    for (m = nn - 2; m >= l; --m) {
                        z = h(m, m);
                        const double rr = x - z;
                        const double ss = y - z;
                        p = (rr * ss - ww) / h(m + 1, m) + h(m, m + 1);
                        q = h(m + 1, m + 1) - z - rr - ss;
                        r = h(m + 2, m + 1);
                        const double scale = std::abs(p) + std::abs(q) + std::abs(r);
                        if (scale != 0.0) { p /= scale; q /= scale; r /= scale; }
                        if (m == l) break;
                        const double u = std::abs(h(m, m - 1)) * (std::abs(q) + std::abs(r));
                        const double vv = std::abs(p) *
                                          (std::abs(h(m - 1, m - 1)) + std::abs(z) +
                                           std::abs(h(m + 1, m + 1)));
                        if (u <= eps * vv) break;
                    }
                    for (int i = m + 2; i <= nn; ++i) {
                        h(i, i - 2) = 0.0;
                        if (i != m + 2) h(i, i - 3) = 0.0;
                    }
                    for (int k = m; k <= nn - 1; ++k) {
                        if (k != m) {
                            p = h(k, k - 1);
                            q = h(k + 1, k - 1);
                            r = (k != nn - 1) ? h(k + 2, k - 1) : 0.0;
                            x = std::abs(p) + std::abs(q) + std::abs(r);
                            if (x != 0.0) { p /= x; q /= x; r /= x; }
                        }
                        const double s = sign_like(std::sqrt(p * p + q * q + r * r), p);
                        if (s == 0.0) continue;
                        if (k == m) {
                            if (l != m) h(k, k - 1) = -h(k, k - 1);
                        } else {
                            h(k, k - 1) = -s * x;
                        }
                        p += s;
                        x = p / s;
                        y = q / s;
                        z = r / s;
                        q /= p;
                        r /= p;
                        for (int j = k; j <= nn; ++j) {
                            double pp = h(k, j) + q * h(k + 1, j);
                            if (k != nn - 1) {
                                pp += r * h(k + 2, j);
                                h(k + 2, j) -= pp * z;
                            }
                            h(k + 1, j) -= pp * y;
                            h(k, j) -= pp * x;
                        }
                        const int mmin = std::min(nn, k + 3);
                        for (int i = l; i <= mmin; ++i) {
                            double pp = x * h(i, k) + y * h(i, k + 1);
                            if (k != nn - 1) {
                                pp += z * h(i, k + 2);
                                h(i, k + 2) -= pp * r;
                            }
                            h(i, k + 1) -= pp * q;
                            h(i, k) -= pp;
                        }
                    }
                }
            }
        } while (l < nn - 1);
    }
}

/// Solve (H - lambda I) x = b for upper Hessenberg H with adjacent-row
/// pivoting. Exactly zero pivots are replaced by eps * scale, which is the
/// intended behavior for inverse iteration at a converged shift.
inline std::vector<complexd> hessenberg_shifted_solve(const RealMatrix& h, complexd lambda,
                                                      std::vector<complexd> b, double scale) {
    const int n = h.rows;
    const double tiny = std::numeric_limits<double>::epsilon() * std::max(scale, 1.0);
    ComplexMatrix c(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = std::max(i - 1, 0); j < n; ++j)
            c(i, j) = complexd(h(i, j), 0.0) - (i == j ? lambda : complexd(0.0, 0.0));
    for (int k = 0; k < n - 1; ++k) {
        if (std::abs(c(k + 1, k)) > std::abs(c(k, k))) {
            for (int j = k; j < n; ++j) std::swap(c(k, j), c(k + 1, j));
            std::swap(b[k], b[k + 1]);
        }
        if (std::abs(c(k, k)) == 0.0) c(k, k) = tiny;
        const complexd f = c(k + 1, k) / c(k, k);
        if (f != complexd(0.0, 0.0)) {
            for (int j = k + 1; j < n; ++j) c(k + 1, j) -= f * c(k, j);
            b[k + 1] -= f * b[k];
        }
        c(k + 1, k) = 0.0;
    }
    if (std::abs(c(n - 1, n - 1)) == 0.0) c(n - 1, n - 1) = tiny;
    std::vector<complexd> x(n);
    for (int i = n - 1; i >= 0; --i) {
        complexd s = b[i];
        for (int j = i + 1; j < n; ++j) s -= c(i, j) * x[j];
        x[i] = s / c(i, i);
    }
    return x;
}

inline double cvec_norm(const std::vector<complexd>& v) {
    double s = 0.0;
    for (const complexd& z : v) s += std::norm(z);
    return std::sqrt(s);
}

/// || (H - lambda I) x ||_2 for unit x.
inline double hess_residual(const RealMatrix& h, complexd lambda,
                            const std::vector<complexd>& x) {
    const int n = h.rows;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        complexd acc = -lambda * x[i];
        for (int j = std::max(i - 1, 0); j < n; ++j) acc += h(i, j) * x[j];
        s += std::norm(acc);
    }
    return std::sqrt(s);
}

/// Inverse iteration for one eigenvector of Hessenberg h at shift lambda.
/// `against` holds already-accepted vectors of (numerically) coincident
/// eigenvalues; the iterate is kept orthogonal to them so repeated
/// eigenvalues of a diagonalizable matrix still yield an independent basis.
inline std::vector<complexd> hess_eigenvector(const RealMatrix& h, complexd lambda,
                                              const std::vector<std::vector<complexd>>& against,
                                              double scale) {
    const int n = h.rows;
    const double accept = 1e-12 * std::max(scale, 1.0);
    std::vector<complexd> best;
    double best_res = std::numeric_limits<double>::infinity();

    for (int start = 0; start <= n; ++start) {
        std::vector<complexd> b(n, complexd(0.0, 0.0));
        if (start == 0) {
            const double inv = 1.0 / std::sqrt(double(n));
            for (int i = 0; i < n; ++i) b[i] = inv;
        } else {
            b[start - 1] = 1.0;
        }
        bool collapsed = false;
        for (int iter = 0; iter < 3; ++iter) {
            std::vector<complexd> x = hessenberg_shifted_solve(h, lambda, b, scale);
            const double pre = cvec_norm(x);
            for (const auto& v : against) {
                complexd dot(0.0, 0.0);
                for (int i = 0; i < n; ++i) dot += std::conj(v[i]) * x[i];
                for (int i = 0; i < n; ++i) x[i] -= dot * v[i];
            }
            const double nrm = cvec_norm(x);
            if (nrm <= 1e-8 * pre || nrm == 0.0) {
                collapsed = true;  // start vector lives in the excluded span
                break;
            }
            for (complexd& z : x) z /= nrm;
            const double res = hess_residual(h, lambda, x);
            if (res < best_res) {
                best_res = res;
                best = x;
            }
            if (res <= accept) return best;
            b = x;
        }
        if (!collapsed && best_res <= accept) break;
    }
    if (best.empty())
        throw non_diagonalizable("eig: inverse iteration found no usable eigenvector");
    return best;
}

}  // namespace detail

/// Full eigendecomposition with validation. Throws non_diagonalizable when
/// the residual ||A Y - Y diag(lambda)||_F exceeds resid_tol * ||A||_F or the
/// eigenvector basis has singular value ratio below cond_tol.
inline EigResult eig(const RealMatrix& a, double resid_tol = 1e-6, double cond_tol = 1e-13) {
    require(a.rows == a.cols, "eig: matrix must be square");
    require(a.rows > 0, "eig: empty matrix");
    a.check_finite("eig");
    const int n = a.rows;

    RealMatrix h = a;
    RealMatrix q;
    detail::hessenberg(h, q);

    std::vector<complexd> w;
    {
        RealMatrix hc = h;
        detail::hqr_eigenvalues(hc, w);
    }
    std::sort(w.begin(), w.end(), [](const complexd& x, const complexd& y) {
        const double mx = std::abs(x), my = std::abs(y);
        if (mx != my) return mx > my;
        if (x.real() != y.real()) return x.real() > y.real();
        return x.imag() > y.imag();
    });

    const double hnorm = frobenius_norm(h);
    double specmax = 0.0;
    for (const complexd& z : w) specmax = std::max(specmax, std::abs(z));
    const double cluster_tol = 1e-8 * std::max(1.0, specmax);

    // eigenvectors in Hessenberg coordinates; conjugate partners are copied
    ComplexMatrix vh(n, n);
    std::vector<bool> direct(n, false);
    std::vector<bool> consumed(n, false);  // +Im member already paired away
    for (int j = 0; j < n; ++j) {
        if (w[j].imag() < 0.0) {
            int partner = -1;
            for (int k = 0; k < j; ++k) {
                if (!consumed[k] && direct[k] && w[k] == std::conj(w[j])) {
                    partner = k;
                    break;
                }
            }
            if (partner >= 0) {
                consumed[partner] = true;
                for (int i = 0; i < n; ++i) vh(i, j) = std::conj(vh(i, partner));
                continue;
            }
        }
        std::vector<std::vector<complexd>> against;
        for (int k = 0; k < j; ++k)
            if (direct[k] && std::abs(w[k] - w[j]) <= cluster_tol)
                against.push_back(vh.col(k));
        std::vector<complexd> v = detail::hess_eigenvector(h, w[j], against, hnorm);
        for (int i = 0; i < n; ++i) vh(i, j) = v[i];
        direct[j] = true;
    }

    // back to original coordinates, normalize, fix phase
    ComplexMatrix y = cmatmul(promote(q), vh);
    for (int j = 0; j < n; ++j) {
        double nrm = 0.0;
        for (int i = 0; i < n; ++i) nrm += std::norm(y(i, j));
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) throw non_diagonalizable("eig: zero eigenvector column");
        int arg = 0;
        double big = -1.0;
        for (int i = 0; i < n; ++i) {
            const double m = std::abs(y(i, j));
            if (m > big) { big = m; arg = i; }
        }
        const complexd phase = y(arg, j) / std::abs(y(arg, j));
        const complexd fix = std::conj(phase) / nrm;
        for (int i = 0; i < n; ++i) y(i, j) *= fix;
    }

    EigResult out{std::move(w), std::move(y)};

    // residual gate
    ComplexMatrix ay = cmatmul(promote(a), out.Y);
    double resid = 0.0;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) resid += std::norm(ay(i, j) - out.Y(i, j) * out.lambda[j]);
    resid = std::sqrt(resid);
    const double fro_a = frobenius_norm(a);
    if (resid > resid_tol * std::max(fro_a, 1e-300))
        throw non_diagonalizable("eig: residual " + std::to_string(resid) +
                                 " exceeds tolerance for matrix norm " + std::to_string(fro_a));

    // conditioning gate on the eigenvector basis
    RealMatrix emb(2 * n, 2 * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const complexd v = out.Y(i, j);
            emb(i, j) = v.real();
            emb(i, n + j) = -v.imag();
            emb(n + i, j) = v.imag();
            emb(n + i, n + j) = v.real();
        }
    }
    SvdResult es = svd_thin(emb);
    const double smax = es.sigma.front(), smin = es.sigma.back();
    if (smax == 0.0 || smin / smax < cond_tol)
        throw non_diagonalizable("eig: eigenvector basis is numerically singular (ratio " +
                                 std::to_string(smax == 0.0 ? 0.0 : smin / smax) + ")");
    return out;
}

/// Reverse-mode derivative of eig for a real input matrix:
///   grad_A = Re( Y^{-H} (diag(gLambda) + F .* (Y^H gY)) Y^H ),
/// F_ij = 1 / conj(lambda_j - lambda_i) off the diagonal. The conjugate is
/// what makes the rule consistent with adjoints stored as
/// dL/dRe + i dL/dIm (the Hermitian case, where it is invisible, is the
/// usual statement). Gap magnitudes below 1e-6 are clamped (direction kept)
/// and counted in stats.
inline RealMatrix eig_backward(const EigResult& e,
                               const std::vector<complexd>* gLambda,
                               const ComplexMatrix* gY,
                               ClampStats* stats = nullptr) {
    const int n = e.Y.rows;
    require(int(e.lambda.size()) == n && e.Y.cols == n, "eig_backward: malformed result");
    if (gLambda) require(int(gLambda->size()) == n, "eig_backward: gLambda length");
    if (gY) require(gY->rows == n && gY->cols == n, "eig_backward: gY shape");

    ComplexMatrix mid(n, n);
    if (gLambda)
        for (int i = 0; i < n; ++i) mid(i, i) += (*gLambda)[i];
    if (gY) {
        ComplexMatrix p = cmatmul(hermitian(e.Y), *gY);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                complexd d = std::conj(e.lambda[j] - e.lambda[i]);
                const double m = std::abs(d);
                if (m < 1e-6) {
                    d = (m == 0.0) ? complexd(1e-6, 0.0) : d * (1e-6 / m);
                    if (stats) ++stats->f_clamped;
                }
                mid(i, j) += p(i, j) / d;
            }
        }
    }
    ComplexMatrix rhs = cmatmul(mid, hermitian(e.Y));
    ComplexMatrix abar = csolve(hermitian(e.Y), rhs);
    return real_part(abar);
}

}  // namespace ndmd
