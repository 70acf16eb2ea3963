#pragma once

#include <algorithm>
#include <complex>
#include <vector>

#include "ndmd/eig.hpp"
#include "ndmd/errors.hpp"
#include "ndmd/matrix.hpp"
#include "ndmd/svd.hpp"

namespace ndmd {

/// Paired snapshot matrices: column s of psi1 is the lifted state at
/// timestep taus[s], column s of psi2 the state one step later. Timesteps
/// need not be consecutive, ordered, or distinct.
struct SnapshotPair {
    RealMatrix psi1;
    RealMatrix psi2;
    std::vector<long> taus;
};

/// A fitted spectral model: psi_hat(t) = Phi Lambda^(t - anchor) alpha.
struct SpectralModel {
    std::vector<complexd> lambdas;
    ComplexMatrix phi;            // K x R modes
    std::vector<complexd> alpha;  // R amplitudes
    long anchor = 1;
    int rank = 0;
};

/// A fitted model with exogenous input:
/// psi_hat(t) = Phi Lambda^(t-1) alpha
///            + sum_{tau=1}^{t-1} Phi Lambda^(t-tau-1) mode_input xi_tau.
/// Timesteps are 1-based and the amplitude is anchored at psi_1.
struct ControlModel {
    std::vector<complexd> lambdas;
    ComplexMatrix phi;            // K x R modes
    std::vector<complexd> alpha;  // R amplitudes
    RealMatrix b_hat;             // K x N estimated input matrix
    ComplexMatrix mode_input;     // R x N, pinv(Phi) * b_hat
    long anchor = 1;
    int rank_p = 0;
    int rank_r = 0;
    // False when the exogenous series was (numerically) all zero, which
    // leaves b_hat unidentifiable. The fit still completes.
    bool input_identifiable = true;
};

/// Assemble snapshot pairs from a K x T series. taus are 1-based; column s
/// of psi1 is series column taus[s]-1 and psi2 the one after it. Columns
/// keep the given tau order.
inline SnapshotPair build_pairs(const RealMatrix& series, const std::vector<long>& taus) {
    require(series.rows >= 1 && series.cols >= 2, "build_pairs: series needs at least two timesteps");
    require(!taus.empty(), "build_pairs: no timesteps given");
    const long t_max = series.cols;
    std::vector<int> i1, i2;
    i1.reserve(taus.size());
    i2.reserve(taus.size());
    for (long tau : taus) {
        require(tau >= 1 && tau <= t_max - 1, "build_pairs: timestep out of range");
        i1.push_back(int(tau - 1));
        i2.push_back(int(tau));
    }
    SnapshotPair pair;
    pair.psi1 = gather_cols(series, i1);
    pair.psi2 = gather_cols(series, i2);
    pair.taus = taus;
    return pair;
}

namespace detail {

/// Scale the columns of psi2 * V by the reciprocal singular values, the
/// common K x R factor of the reduced operator and the modes. Enforces the
/// rank degeneracy floor.
inline RealMatrix projected_factor(const RealMatrix& psi2, const SvdResult& s) {
    if (s.rank <= 0 || s.sigma.empty() || !(s.sigma[0] > 0.0))
        throw degenerate_input("dmd_fit: snapshot matrix is zero");
    const double floor = 1e-12 * s.sigma[0];
    std::vector<double> inv(s.sigma.size());
    for (std::size_t i = 0; i < s.sigma.size(); ++i) {
        if (!(s.sigma[i] > floor))
            throw degenerate_input("dmd_fit: snapshot matrix is rank deficient at the requested rank");
        inv[i] = 1.0 / s.sigma[i];
    }
    return scale_cols(matmul(psi2, s.V), inv);
}

/// Shrink an SVD to the triplets whose sigma clears the degeneracy floor.
/// Returns how many were kept (possibly fewer than requested).
inline int drop_degenerate_triplets(SvdResult& s) {
    if (s.rank <= 0 || s.sigma.empty() || !(s.sigma[0] > 0.0))
        throw degenerate_input("dmdc_fit: stacked snapshot matrix is zero");
    const double floor = 1e-12 * s.sigma[0];
    int keep = 0;
    while (keep < s.rank && s.sigma[std::size_t(keep)] > floor) ++keep;
    if (keep < s.rank) {
        s.sigma.resize(std::size_t(keep));
        s.U = col_slice(s.U, 0, keep);
        s.V = col_slice(s.V, 0, keep);
        s.rank = keep;
    }
    return keep;
}

/// Least-squares amplitudes pinv(Phi) * psi.
inline std::vector<complexd> fit_amplitudes(const ComplexMatrix& phi, const RealMatrix& psi_col) {
    const ComplexMatrix a = cmatmul(cpinv(phi), promote(psi_col));
    std::vector<complexd> alpha(a.data.begin(), a.data.end());
    return alpha;
}

}  // namespace detail

/// Classic DMD on a snapshot pair. Computes the truncated SVD of psi1,
/// the reduced operator A_tilde = U^T psi2 V Sigma^-1, its eigendecomposition,
/// modes Phi = psi2 V Sigma^-1 Y, and amplitudes alpha = pinv(Phi) psi_tau1
/// where tau1 is the smallest sampled timestep.
inline SpectralModel dmd_fit(const SnapshotPair& pair, const RankSpec& rank) {
    require(pair.psi1.same_shape(pair.psi2), "dmd_fit: psi1 and psi2 shapes differ");
    require(long(pair.taus.size()) == pair.psi1.cols, "dmd_fit: tau list does not match columns");
    if (rank.kind == RankSpec::Kind::fixed)
        require(rank.r <= std::min(pair.psi1.rows, pair.psi1.cols),
                "dmd_fit: rank exceeds min(K, S)");

    const SvdResult s = svd_truncated(pair.psi1, rank);
    const RealMatrix g = detail::projected_factor(pair.psi2, s);  // K x R
    const RealMatrix a_tilde = matmul(transpose(s.U), g);         // R x R
    const EigResult e = eig(a_tilde);

    SpectralModel m;
    m.rank = s.rank;
    m.lambdas = e.lambda;
    m.phi = cmatmul(promote(g), e.Y);

    const auto it = std::min_element(pair.taus.begin(), pair.taus.end());
    m.anchor = *it;
    const int anchor_col = int(it - pair.taus.begin());
    m.alpha = detail::fit_amplitudes(m.phi, RealMatrix::col_vector(col_of(pair.psi1, anchor_col)));
    return m;
}

namespace detail {

/// Least-squares amplitudes for a trailing stretch of snapshots: column j of
/// psi_tail is modeled as Phi Lambda^j alpha0. Returned propagated to the
/// last column, so forecasts continue from there. One column reduces to the
/// plain pinv(Phi) fit; more columns average snapshot noise out of the
/// amplitudes. Solved by normal equations in mode space (R is small).
inline std::vector<complexd> tail_amplitudes(const ComplexMatrix& phi,
                                             const std::vector<complexd>& lambdas,
                                             const RealMatrix& psi_tail) {
    const int r = phi.cols;
    const int w = psi_tail.cols;
    const ComplexMatrix p = cmatmul(hermitian(phi), phi);                  // R x R
    const ComplexMatrix q = cmatmul(hermitian(phi), promote(psi_tail));    // R x W
    ComplexMatrix a(r, r);
    ComplexMatrix b(r, 1);
    std::vector<complexd> pw(std::size_t(r), complexd(1.0, 0.0));
    for (int j = 0; j < w; ++j) {
        for (int i = 0; i < r; ++i) {
            for (int k = 0; k < r; ++k)
                a(i, k) += std::conj(pw[std::size_t(i)]) * p(i, k) * pw[std::size_t(k)];
            b(i, 0) += std::conj(pw[std::size_t(i)]) * q(i, j);
        }
        for (int i = 0; i < r; ++i) pw[std::size_t(i)] *= lambdas[std::size_t(i)];
    }
    const ComplexMatrix alpha0 = cmatmul(cpinv(a), b);
    std::vector<complexd> alpha(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        alpha[std::size_t(i)] = cpow_int(lambdas[std::size_t(i)], w - 1) * alpha0(i, 0);
    return alpha;
}

}  // namespace detail

/// Refit the amplitudes against the trailing columns of the fit window so
/// forecasts extrapolate from its end instead of its start. t_end is the
/// 1-based timestep of psi_tail's last column. Modes and spectrum are
/// unchanged. Standard practice when forecasting past the fit window: phase
/// error then accumulates only over the forecast horizon, not the whole
/// history, and a multi-column tail keeps one noisy snapshot from steering
/// the whole forecast.
inline void reanchor(SpectralModel& m, const RealMatrix& psi_tail, long t_end) {
    require(psi_tail.rows == m.phi.rows && psi_tail.cols >= 1, "reanchor: bad tail shape");
    m.alpha = detail::tail_amplitudes(m.phi, m.lambdas, psi_tail);
    m.anchor = t_end;
}

/// Spectral forecast psi_hat(t) = sum_r lambda_r^(t-anchor) alpha_r phi_r,
/// returned as a complex K x 1 column. Backward extrapolation is rejected.
inline ComplexMatrix dmd_forecast(const SpectralModel& m, long t) {
    require(t >= m.anchor, "dmd_forecast: timestep precedes the amplitude anchor");
    const long e = t - m.anchor;
    ComplexMatrix out(m.phi.rows, 1);
    for (int r = 0; r < m.rank; ++r) {
        const complexd w = cpow_int(m.lambdas[std::size_t(r)], e) * m.alpha[std::size_t(r)];
        for (int i = 0; i < m.phi.rows; ++i) out(i, 0) += w * m.phi(i, r);
    }
    return out;
}

/// DMD with control on consecutive snapshots. Stacks omega = [psi1; xi1],
/// takes its rank-P SVD with U split into state rows U1 and input rows U2,
/// estimates B_hat = psi2 V Sigma^-1 U2^T, and reduces the transition through
/// the rank-R SVD basis U_hat of psi2:
/// A_tilde = U_hat^T (psi2 V Sigma^-1 U1^T) U_hat.
inline ControlModel dmdc_fit(const RealMatrix& psi1, const RealMatrix& psi2,
                             const RealMatrix& xi1, const RankSpec& rank_p,
                             const RankSpec& rank_r) {
    require(psi1.same_shape(psi2), "dmdc_fit: psi1 and psi2 shapes differ");
    require(xi1.cols == psi1.cols, "dmdc_fit: exogenous series length mismatch");
    const int k = psi1.rows;
    const int n = xi1.rows;
    if (rank_p.kind == RankSpec::Kind::fixed)
        require(rank_p.r <= std::min(k + n, int(psi1.cols)), "dmdc_fit: P exceeds min(K+N, S)");
    if (rank_r.kind == RankSpec::Kind::fixed)
        require(rank_r.r <= std::min(k, int(psi2.cols)), "dmdc_fit: R exceeds min(K, S)");

    // A stacked matrix that is rank deficient at the requested P means the
    // input rows add no directions beyond the states; the fit proceeds on
    // the supported subspace and the input estimate is marked unreliable.
    SvdResult so = svd_truncated(vconcat(psi1, xi1), rank_p);
    const int requested_p = so.rank;
    const int kept_p = detail::drop_degenerate_triplets(so);
    const RealMatrix g = detail::projected_factor(psi2, so);  // K x P
    const RealMatrix u1 = row_slice(so.U, 0, k);              // K x P
    const RealMatrix u2 = row_slice(so.U, k, k + n);          // N x P

    const SvdResult s2 = svd_truncated(psi2, rank_r);
    if (s2.rank <= 0 || s2.sigma.empty() || !(s2.sigma[0] > 0.0))
        throw degenerate_input("dmdc_fit: psi2 is zero");
    if (!(s2.sigma[std::size_t(s2.rank - 1)] > 1e-12 * s2.sigma[0]))
        throw degenerate_input("dmdc_fit: psi2 is rank deficient at the requested rank");
    const RealMatrix u_hat = s2.U;  // K x R

    const RealMatrix proj = matmul(g, matmul(transpose(u1), u_hat));  // K x R
    const RealMatrix a_tilde = matmul(transpose(u_hat), proj);        // R x R
    const EigResult e = eig(a_tilde);

    ControlModel m;
    m.rank_p = so.rank;
    m.rank_r = s2.rank;
    m.lambdas = e.lambda;
    m.phi = cmatmul(promote(proj), e.Y);
    m.b_hat = matmul(g, transpose(u2));
    m.alpha = detail::fit_amplitudes(m.phi, RealMatrix::col_vector(col_of(psi1, 0)));
    m.mode_input = cmatmul(cpinv(m.phi), promote(m.b_hat));
    m.input_identifiable = max_abs(xi1) > 1e-12 && kept_p == requested_p;
    return m;
}

/// Control analog of reanchor. The tail fit ignores the forcing terms, which
/// is exact for autonomous stretches and a noise-averaging approximation
/// otherwise; a single-column tail is the exact forced re-anchor.
inline void reanchor(ControlModel& m, const RealMatrix& psi_tail, long t_end) {
    require(psi_tail.rows == m.phi.rows && psi_tail.cols >= 1, "reanchor: bad tail shape");
    m.alpha = detail::tail_amplitudes(m.phi, m.lambdas, psi_tail);
    m.anchor = t_end;
}

/// Control forecast at 1-based timestep t, given the exogenous series xi
/// (N columns, column j holding xi at timestep j+1). Evaluated through the
/// mode-space recurrence w_anchor = alpha, w_{j+1} = Lambda w_j + mode_input
/// xi_j, which sums the same powers as the closed form.
inline ComplexMatrix dmdc_forecast(const ControlModel& m, const RealMatrix& xi, long t) {
    require(t >= m.anchor, "dmdc_forecast: timestep precedes the amplitude anchor");
    require(xi.rows == m.b_hat.cols, "dmdc_forecast: exogenous dimension mismatch");
    require(xi.cols >= t - 1, "dmdc_forecast: exogenous series too short for horizon");
    std::vector<complexd> w = m.alpha;
    for (long j = m.anchor; j < t; ++j) {
        for (int r = 0; r < m.rank_r; ++r) {
            complexd forced = 0.0;
            for (int d = 0; d < xi.rows; ++d)
                forced += m.mode_input(r, d) * xi(d, int(j - 1));
            w[std::size_t(r)] = m.lambdas[std::size_t(r)] * w[std::size_t(r)] + forced;
        }
    }
    ComplexMatrix out(m.phi.rows, 1);
    for (int r = 0; r < m.rank_r; ++r)
        for (int i = 0; i < m.phi.rows; ++i) out(i, 0) += w[std::size_t(r)] * m.phi(i, r);
    return out;
}

/// Quadratic dictionary lift applied column-wise: each observation x gains
/// all products x_i * x_j with i <= j, giving M + M(M+1)/2 rows.
inline RealMatrix edmd_lift(const RealMatrix& x) {
    const int m = x.rows;
    RealMatrix out(m + m * (m + 1) / 2, x.cols);
    for (int c = 0; c < x.cols; ++c) {
        int row = 0;
        for (int i = 0; i < m; ++i) out(row++, c) = x(i, c);
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j) out(row++, c) = x(i, c) * x(j, c);
    }
    return out;
}

/// Diagnostic for the real-part projection of complex forecasts: the ratio
/// of the imaginary to the real Frobenius norm. Conjugate-closed spectra
/// keep this at roundoff level.
inline double imag_residue_ratio(const ComplexMatrix& v) {
    double re = 0.0, im = 0.0;
    for (const complexd& z : v.data) {
        re += z.real() * z.real();
        im += z.imag() * z.imag();
    }
    return std::sqrt(im) / std::max(std::sqrt(re), 1e-300);
}

}  // namespace ndmd
