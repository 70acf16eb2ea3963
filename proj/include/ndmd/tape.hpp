#pragma once

// Reverse-mode automatic differentiation over dense real and complex
// matrices, built for differentiating through matrix decompositions.
//
// Complex adjoints follow the real-pair convention: for a real-valued loss L
// and a complex quantity z, the stored adjoint is dL/dRe(z) + i dL/dIm(z).
// Under that convention a holomorphic elementwise map w = f(z) pulls back as
// g_z = conj(f'(z)) * g_w, and matrix products as
//   C = A B   =>   g_A = g_C B^H,  g_B = A^H g_C.

#include <complex>
#include <functional>
#include <utility>
#include <variant>
#include <vector>

#include "ndmd/eig.hpp"
#include "ndmd/errors.hpp"
#include "ndmd/matrix.hpp"
#include "ndmd/svd.hpp"

namespace ndmd {

class Tape {
public:
    struct Var {
        int node = -1;
        int slot = 0;
    };

    // backward closures capture `this`
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves ------------------------------------------------------

    Var input(RealMatrix v) {
        nodes_.emplace_back();
        nodes_.back().out.emplace_back(std::move(v));
        return {int(nodes_.size()) - 1, 0};
    }

    // ---- value / gradient access --------------------------------------

    const RealMatrix& rval(Var v) const { return std::get<RealMatrix>(out(v)); }
    const ComplexMatrix& cval(Var v) const { return std::get<ComplexMatrix>(out(v)); }

    /// Gradient accumulated by backward(); zeros when the variable does not
    /// influence the loss.
    RealMatrix rgrad(Var v) const {
        const Value* a = adj_ptr(v);
        if (!a) {
            const RealMatrix& x = rval(v);
            return RealMatrix(x.rows, x.cols);
        }
        return std::get<RealMatrix>(*a);
    }

    ComplexMatrix cgrad(Var v) const {
        const Value* a = adj_ptr(v);
        if (!a) {
            const ComplexMatrix& x = cval(v);
            return ComplexMatrix(x.rows, x.cols);
        }
        return std::get<ComplexMatrix>(*a);
    }

    // ---- real ops ------------------------------------------------------

    Var add(Var a, Var b) {
        Var out_v = push(ndmd::add(rval(a), rval(b)));
        set_back(out_v, [this, a, b, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                racc(a, *g);
                racc(b, *g);
            }
        });
        return out_v;
    }

    Var sub(Var a, Var b) {
        Var out_v = push(ndmd::sub(rval(a), rval(b)));
        set_back(out_v, [this, a, b, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                racc(a, *g);
                racc(b, ndmd::scale(*g, -1.0));
            }
        });
        return out_v;
    }

    Var scale(Var a, double c) {
        Var out_v = push(ndmd::scale(rval(a), c));
        set_back(out_v, [this, a, c, out_v] {
            if (const RealMatrix* g = radj(out_v)) racc(a, ndmd::scale(*g, c));
        });
        return out_v;
    }

    Var matmul(Var a, Var b) {
        Var out_v = push(ndmd::matmul(rval(a), rval(b)));
        set_back(out_v, [this, a, b, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                racc(a, ndmd::matmul(*g, ndmd::transpose(rval(b))));
                racc(b, ndmd::matmul(ndmd::transpose(rval(a)), *g));
            }
        });
        return out_v;
    }

    Var transpose(Var a) {
        Var out_v = push(ndmd::transpose(rval(a)));
        set_back(out_v, [this, a, out_v] {
            if (const RealMatrix* g = radj(out_v)) racc(a, ndmd::transpose(*g));
        });
        return out_v;
    }

    /// Broadcast-add a column vector b (m x 1) to every column of a (m x n).
    Var add_col(Var a, Var b) {
        const RealMatrix& x = rval(a);
        const RealMatrix& c = rval(b);
        require(c.rows == x.rows && c.cols == 1, "add_col: bias must be m x 1");
        RealMatrix y = x;
        for (int i = 0; i < y.rows; ++i)
            for (int j = 0; j < y.cols; ++j) y(i, j) += c(i, 0);
        Var out_v = push(std::move(y));
        set_back(out_v, [this, a, b, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                racc(a, *g);
                racc(b, row_sum(*g));
            }
        });
        return out_v;
    }

    Var tanh_op(Var a) {
        RealMatrix y = rval(a);
        for (double& v : y.data) v = std::tanh(v);
        Var out_v = push(std::move(y));
        set_back(out_v, [this, a, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const RealMatrix& t = rval(out_v);
                RealMatrix ga = *g;
                for (std::size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] *= 1.0 - t.data[i] * t.data[i];
                racc(a, std::move(ga));
            }
        });
        return out_v;
    }

    Var relu_op(Var a) {
        RealMatrix y = rval(a);
        for (double& v : y.data)
            if (v < 0.0) v = 0.0;
        Var out_v = push(std::move(y));
        set_back(out_v, [this, a, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const RealMatrix& x = rval(a);
                RealMatrix ga = *g;
                for (std::size_t i = 0; i < ga.data.size(); ++i)
                    if (x.data[i] <= 0.0) ga.data[i] = 0.0;
                racc(a, std::move(ga));
            }
        });
        return out_v;
    }

    /// Elementwise product with a constant matrix (dropout masks).
    Var hadamard_const(Var a, RealMatrix mask) {
        Var out_v = push(ndmd::hadamard(rval(a), mask));
        set_back(out_v, [this, a, m = std::move(mask), out_v] {
            if (const RealMatrix* g = radj(out_v)) racc(a, ndmd::hadamard(*g, m));
        });
        return out_v;
    }

    /// Elementwise reciprocal.
    Var recip(Var a) {
        RealMatrix y = rval(a);
        for (double& v : y.data) v = 1.0 / v;
        Var out_v = push(std::move(y));
        set_back(out_v, [this, a, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const RealMatrix& y2 = rval(out_v);
                RealMatrix ga = *g;
                for (std::size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] *= -y2.data[i] * y2.data[i];
                racc(a, std::move(ga));
            }
        });
        return out_v;
    }

    /// Scale column j of a by v_j, v given as an n x 1 variable.
    Var colscale(Var a, Var v) {
        const RealMatrix& x = rval(a);
        const RealMatrix& d = rval(v);
        require(d.rows == x.cols && d.cols == 1, "colscale: need n x 1 scales");
        RealMatrix y = x;
        for (int i = 0; i < y.rows; ++i)
            for (int j = 0; j < y.cols; ++j) y(i, j) *= d(j, 0);
        Var out_v = push(std::move(y));
        set_back(out_v, [this, a, v, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const RealMatrix& x2 = rval(a);
                const RealMatrix& d2 = rval(v);
                RealMatrix ga(x2.rows, x2.cols);
                RealMatrix gv(d2.rows, 1);
                for (int i = 0; i < x2.rows; ++i) {
                    for (int j = 0; j < x2.cols; ++j) {
                        ga(i, j) = (*g)(i, j) * d2(j, 0);
                        gv(j, 0) += (*g)(i, j) * x2(i, j);
                    }
                }
                racc(a, std::move(ga));
                racc(v, std::move(gv));
            }
        });
        return out_v;
    }

    Var gather_cols(Var a, std::vector<int> idx) {
        Var out_v = push(ndmd::gather_cols(rval(a), idx));
        set_back(out_v, [this, a, ix = std::move(idx), out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const RealMatrix& x = rval(a);
                RealMatrix ga(x.rows, x.cols);
                for (int j = 0; j < int(ix.size()); ++j)
                    for (int i = 0; i < x.rows; ++i) ga(i, ix[j]) += (*g)(i, j);
                racc(a, std::move(ga));
            }
        });
        return out_v;
    }

    Var vconcat(Var a, Var b) {
        Var out_v = push(ndmd::vconcat(rval(a), rval(b)));
        set_back(out_v, [this, a, b, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const int ra = rval(a).rows;
                racc(a, row_slice(*g, 0, ra));
                racc(b, row_slice(*g, ra, g->rows));
            }
        });
        return out_v;
    }

    Var row_range(Var a, int r0, int r1) {
        Var out_v = push(row_slice(rval(a), r0, r1));
        set_back(out_v, [this, a, r0, r1, out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const RealMatrix& x = rval(a);
                RealMatrix ga(x.rows, x.cols);
                for (int i = r0; i < r1; ++i)
                    for (int j = 0; j < x.cols; ++j) ga(i, j) = (*g)(i - r0, j);
                racc(a, std::move(ga));
            }
        });
        return out_v;
    }

    /// Sum of squared differences against a constant target; 1 x 1 output.
    Var sse_against(Var a, RealMatrix target) {
        const RealMatrix& x = rval(a);
        require(x.rows == target.rows && x.cols == target.cols, "sse_against: shape mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double d = x.data[i] - target.data[i];
            s += d * d;
        }
        RealMatrix y(1, 1);
        y(0, 0) = s;
        Var out_v = push(std::move(y));
        set_back(out_v, [this, a, t = std::move(target), out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const double gs = (*g)(0, 0);
                if (gs == 0.0) return;
                const RealMatrix& x2 = rval(a);
                RealMatrix ga(x2.rows, x2.cols);
                for (std::size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] = 2.0 * gs * (x2.data[i] - t.data[i]);
                racc(a, std::move(ga));
            }
        });
        return out_v;
    }

    // ---- complex ops ---------------------------------------------------

    Var promote_op(Var a) {
        Var out_v = push(ndmd::promote(rval(a)));
        set_back(out_v, [this, a, out_v] {
            if (const ComplexMatrix* g = cadj(out_v)) racc(a, real_part(*g));
        });
        return out_v;
    }

    Var re_part(Var a) {
        Var out_v = push(ndmd::real_part(cval(a)));
        set_back(out_v, [this, a, out_v] {
            if (const RealMatrix* g = radj(out_v)) cacc(a, ndmd::promote(*g));
        });
        return out_v;
    }

    Var cmatmul(Var a, Var b) {
        Var out_v = push(ndmd::cmatmul(cval(a), cval(b)));
        set_back(out_v, [this, a, b, out_v] {
            if (const ComplexMatrix* g = cadj(out_v)) {
                cacc(a, ndmd::cmatmul(*g, hermitian(cval(b))));
                cacc(b, ndmd::cmatmul(hermitian(cval(a)), *g));
            }
        });
        return out_v;
    }

    Var chermitian(Var a) {
        Var out_v = push(hermitian(cval(a)));
        set_back(out_v, [this, a, out_v] {
            if (const ComplexMatrix* g = cadj(out_v)) cacc(a, hermitian(*g));
        });
        return out_v;
    }

    Var cinv(Var a) {
        Var out_v = push(cinverse(cval(a)));
        set_back(out_v, [this, a, out_v] {
            if (const ComplexMatrix* g = cadj(out_v)) {
                const ComplexMatrix ch = hermitian(cval(out_v));
                cacc(a, cscale(ndmd::cmatmul(ch, ndmd::cmatmul(*g, ch)), complexd(-1.0, 0.0)));
            }
        });
        return out_v;
    }

    // ---- decomposition nodes ------------------------------------------

    /// Truncated thin SVD node with three output slots: U (slot 0),
    /// sigma as an r x 1 matrix (slot 1), V (slot 2). The full thin
    /// decomposition is kept internally so the backward pass is exact for
    /// any truncation: adjoints of discarded triplets are zero.
    struct SvdVars {
        Var U, sigma, V;
        int rank = 0;
    };

    SvdVars svd_node(Var a, const RankSpec& spec) {
        SvdResult full = svd_thin(rval(a));
        SvdResult trunc = [&] {
            if (spec.kind == RankSpec::Kind::full) return full;
            SvdResult t = full;
            int keep = full.rank;
            if (spec.kind == RankSpec::Kind::fixed) {
                require(spec.r <= full.rank, "svd_node: requested rank exceeds min(m, n)");
                keep = spec.r;
            } else {
                const double cut = spec.frac * full.sigma[0];
                keep = 0;
                while (keep < full.rank && full.sigma[keep] > cut) ++keep;
            }
            t.rank = keep;
            t.sigma.assign(full.sigma.begin(), full.sigma.begin() + keep);
            t.U = col_slice(full.U, 0, keep);
            t.V = col_slice(full.V, 0, keep);
            return t;
        }();

        RealMatrix sig_col(trunc.rank, 1);
        for (int i = 0; i < trunc.rank; ++i) sig_col(i, 0) = trunc.sigma[i];

        nodes_.emplace_back();
        const int node = int(nodes_.size()) - 1;
        nodes_[node].out.emplace_back(trunc.U);
        nodes_[node].out.emplace_back(std::move(sig_col));
        nodes_[node].out.emplace_back(trunc.V);
        SvdVars vars{{node, 0}, {node, 1}, {node, 2}, trunc.rank};

        nodes_[node].back = [this, a, node, f = std::move(full), r = trunc.rank] {
            const RealMatrix* gu = radj({node, 0});
            const RealMatrix* gs = radj({node, 1});
            const RealMatrix* gv = radj({node, 2});
            if (!gu && !gs && !gv) return;
            const int m = f.U.rows, n = f.V.rows, k = f.rank;
            RealMatrix gU(m, k), gV(n, k);
            std::vector<double> gS(k, 0.0);
            if (gu)
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < r; ++j) gU(i, j) = (*gu)(i, j);
            if (gv)
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < r; ++j) gV(i, j) = (*gv)(i, j);
            if (gs)
                for (int j = 0; j < r; ++j) gS[j] = (*gs)(j, 0);
            racc(a, svd_backward(f, gu ? &gU : nullptr, gs ? &gS : nullptr,
                                 gv ? &gV : nullptr, &clamp_stats));
        };
        return vars;
    }

    /// Eigendecomposition node: lambda as n x 1 complex (slot 0) and the
    /// eigenvector matrix Y (slot 1).
    struct EigVars {
        Var lambda, Y;
    };

    EigVars eig_node(Var a) {
        EigResult e = eig(rval(a));
        const int n = int(e.lambda.size());
        ComplexMatrix lam(n, 1);
        for (int i = 0; i < n; ++i) lam(i, 0) = e.lambda[i];

        nodes_.emplace_back();
        const int node = int(nodes_.size()) - 1;
        nodes_[node].out.emplace_back(std::move(lam));
        nodes_[node].out.emplace_back(e.Y);
        EigVars vars{{node, 0}, {node, 1}};

        nodes_[node].back = [this, a, node, res = std::move(e)] {
            const ComplexMatrix* gl = cadj({node, 0});
            const ComplexMatrix* gy = cadj({node, 1});
            if (!gl && !gy) return;
            std::vector<complexd> glam;
            if (gl) {
                glam.resize(res.lambda.size());
                for (std::size_t i = 0; i < glam.size(); ++i) glam[i] = (*gl)(int(i), 0);
            }
            racc(a, eig_backward(res, gl ? &glam : nullptr, gy, &clamp_stats));
        };
        return vars;
    }

    // ---- spectral forecast ops ------------------------------------------

    /// W(r, j) = lambda_r^{e_j} * alpha_r for constant integer exponents.
    /// Zero adjoint entries are skipped in the backward pass so saturated
    /// downstream gradients cannot turn an overflowing power into NaN.
    Var spectral_weights(Var lambda, Var alpha, std::vector<long> exponents) {
        const ComplexMatrix& lam = cval(lambda);
        const ComplexMatrix& al = cval(alpha);
        require(lam.cols == 1 && al.cols == 1 && lam.rows == al.rows,
                "spectral_weights: lambda and alpha must be matching column vectors");
        const int r = lam.rows, t = int(exponents.size());
        ComplexMatrix w(r, t);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < t; ++j) w(i, j) = cpow_int(lam(i, 0), exponents[j]) * al(i, 0);
        Var out_v = push(std::move(w));
        set_back(out_v, [this, lambda, alpha, ex = std::move(exponents), out_v] {
            if (const ComplexMatrix* g = cadj(out_v)) {
                const ComplexMatrix& lam2 = cval(lambda);
                const ComplexMatrix& al2 = cval(alpha);
                const int r2 = lam2.rows, t2 = int(ex.size());
                ComplexMatrix glam(r2, 1), gal(r2, 1);
                for (int i = 0; i < r2; ++i) {
                    for (int j = 0; j < t2; ++j) {
                        const complexd gw = (*g)(i, j);
                        if (gw == complexd(0.0, 0.0)) continue;
                        const complexd pe = cpow_int(lam2(i, 0), ex[j]);
                        gal(i, 0) += std::conj(pe) * gw;
                        if (ex[j] > 0) {
                            const complexd pem1 = cpow_int(lam2(i, 0), ex[j] - 1);
                            glam(i, 0) +=
                                std::conj(double(ex[j]) * pem1 * al2(i, 0)) * gw;
                        }
                    }
                }
                cacc(lambda, std::move(glam));
                cacc(alpha, std::move(gal));
            }
        });
        return out_v;
    }

    /// Forced linear recursion in the spectral basis:
    ///   W(:, 0) = alpha,  W(:, j) = lambda .* W(:, j-1) + C(:, j-1),
    /// so column j carries the homogeneous mode response plus the
    /// accumulated control contributions. Output is r x (cols(C) + 1).
    Var control_weights(Var lambda, Var alpha, Var c) {
        const ComplexMatrix& lam = cval(lambda);
        const ComplexMatrix& al = cval(alpha);
        const ComplexMatrix& cc = cval(c);
        require(lam.cols == 1 && al.cols == 1 && lam.rows == al.rows,
                "control_weights: lambda and alpha must be matching column vectors");
        require(cc.rows == lam.rows, "control_weights: control term row mismatch");
        const int r = lam.rows, steps = cc.cols;
        ComplexMatrix w(r, steps + 1);
        for (int i = 0; i < r; ++i) w(i, 0) = al(i, 0);
        for (int j = 1; j <= steps; ++j)
            for (int i = 0; i < r; ++i)
                w(i, j) = lam(i, 0) * w(i, j - 1) + cc(i, j - 1);
        Var out_v = push(std::move(w));
        set_back(out_v, [this, lambda, alpha, c, out_v] {
            if (const ComplexMatrix* g = cadj(out_v)) {
                const ComplexMatrix& lam2 = cval(lambda);
                const ComplexMatrix& w2 = cval(out_v);
                const int r2 = lam2.rows, steps2 = w2.cols - 1;
                ComplexMatrix glam(r2, 1), gal(r2, 1), gc(r2, steps2);
                // running adjoint of W(:, j), swept from the last column back
                std::vector<complexd> gw(r2);
                for (int i = 0; i < r2; ++i) gw[i] = (*g)(i, steps2);
                for (int j = steps2; j >= 1; --j) {
                    for (int i = 0; i < r2; ++i) {
                        gc(i, j - 1) += gw[i];
                        glam(i, 0) += std::conj(w2(i, j - 1)) * gw[i];
                        gw[i] = std::conj(lam2(i, 0)) * gw[i] + (*g)(i, j - 1);
                    }
                }
                for (int i = 0; i < r2; ++i) gal(i, 0) += gw[i];
                cacc(lambda, std::move(glam));
                cacc(alpha, std::move(gal));
                cacc(c, std::move(gc));
            }
        });
        return out_v;
    }

    /// Symmetric Chamfer distance between the variable spectrum (n x 1
    /// complex) and a constant target spectrum; 1 x 1 real output. The
    /// subgradient at an exact hit is zero.
    Var chamfer_node(Var lambda, std::vector<complexd> target) {
        const ComplexMatrix& lam = cval(lambda);
        require(lam.cols == 1, "chamfer_node: lambda must be a column vector");
        require(!target.empty() && lam.rows > 0, "chamfer_node: empty spectrum");
        const int n = lam.rows, m = int(target.size());
        double d = 0.0;
        for (int i = 0; i < m; ++i) {
            double best = std::abs(target[i] - lam(0, 0));
            for (int j = 1; j < n; ++j) best = std::min(best, std::abs(target[i] - lam(j, 0)));
            d += best;
        }
        for (int j = 0; j < n; ++j) {
            double best = std::abs(target[0] - lam(j, 0));
            for (int i = 1; i < m; ++i) best = std::min(best, std::abs(target[i] - lam(j, 0)));
            d += best;
        }
        RealMatrix y(1, 1);
        y(0, 0) = d;
        Var out_v = push(std::move(y));
        set_back(out_v, [this, lambda, tg = std::move(target), out_v] {
            if (const RealMatrix* g = radj(out_v)) {
                const double gs = (*g)(0, 0);
                if (gs == 0.0) return;
                const ComplexMatrix& lam2 = cval(lambda);
                const int n2 = lam2.rows, m2 = int(tg.size());
                ComplexMatrix glam(n2, 1);
                const auto push_grad = [&](int j, complexd tgt) {
                    const complexd diff = lam2(j, 0) - tgt;
                    const double a = std::abs(diff);
                    if (a > 0.0) glam(j, 0) += gs * diff / a;
                };
                for (int i = 0; i < m2; ++i) {
                    int arg = 0;
                    double best = std::abs(tg[i] - lam2(0, 0));
                    for (int j = 1; j < n2; ++j) {
                        const double v = std::abs(tg[i] - lam2(j, 0));
                        if (v < best) { best = v; arg = j; }
                    }
                    push_grad(arg, tg[i]);
                }
                for (int j = 0; j < n2; ++j) {
                    int arg = 0;
                    double best = std::abs(tg[0] - lam2(j, 0));
                    for (int i = 1; i < m2; ++i) {
                        const double v = std::abs(tg[i] - lam2(j, 0));
                        if (v < best) { best = v; arg = i; }
                    }
                    push_grad(j, tg[arg]);
                }
                cacc(lambda, std::move(glam));
            }
        });
        return out_v;
    }

    // ---- backward ------------------------------------------------------

    /// Run reverse accumulation from a scalar (1 x 1 real) loss.
    void backward(Var loss) {
        const RealMatrix& l = rval(loss);
        require(l.rows == 1 && l.cols == 1, "backward: loss must be 1 x 1");
        RealMatrix seed(1, 1);
        seed(0, 0) = 1.0;
        racc(loss, std::move(seed));
        for (int i = loss.node; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back();
    }

    std::size_t size() const { return nodes_.size(); }

    ClampStats clamp_stats;

private:
    using Value = std::variant<RealMatrix, ComplexMatrix>;

    struct NodeRec {
        std::vector<Value> out;
        std::vector<Value> adj;  // empty until first accumulation
        std::function<void()> back;
    };

    std::vector<NodeRec> nodes_;

    const Value& out(Var v) const { return nodes_[v.node].out[v.slot]; }

    Var push(RealMatrix m) {
        nodes_.emplace_back();
        nodes_.back().out.emplace_back(std::move(m));
        return {int(nodes_.size()) - 1, 0};
    }

    Var push(ComplexMatrix m) {
        nodes_.emplace_back();
        nodes_.back().out.emplace_back(std::move(m));
        return {int(nodes_.size()) - 1, 0};
    }

    void set_back(Var v, std::function<void()> f) { nodes_[v.node].back = std::move(f); }

    const Value* adj_ptr(Var v) const {
        const NodeRec& n = nodes_[v.node];
        if (int(n.adj.size()) <= v.slot) return nullptr;
        return &n.adj[v.slot];
    }

    const RealMatrix* radj(Var v) const {
        const Value* a = adj_ptr(v);
        return a ? &std::get<RealMatrix>(*a) : nullptr;
    }

    const ComplexMatrix* cadj(Var v) const {
        const Value* a = adj_ptr(v);
        return a ? &std::get<ComplexMatrix>(*a) : nullptr;
    }

    void ensure_adj_slots(NodeRec& n, int slot) {
        // placeholder zero-size values for slots below the touched one
        while (int(n.adj.size()) <= slot) {
            const int i = int(n.adj.size());
            if (std::holds_alternative<RealMatrix>(n.out[i])) {
                const RealMatrix& o = std::get<RealMatrix>(n.out[i]);
                n.adj.emplace_back(RealMatrix(o.rows, o.cols));
            } else {
                const ComplexMatrix& o = std::get<ComplexMatrix>(n.out[i]);
                n.adj.emplace_back(ComplexMatrix(o.rows, o.cols));
            }
        }
    }

    void racc(Var v, RealMatrix g) {
        NodeRec& n = nodes_[v.node];
        const RealMatrix& o = std::get<RealMatrix>(n.out[v.slot]);
        require(g.rows == o.rows && g.cols == o.cols, "tape: adjoint shape mismatch");
        ensure_adj_slots(n, v.slot);
        RealMatrix& a = std::get<RealMatrix>(n.adj[v.slot]);
        for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += g.data[i];
    }

    void cacc(Var v, ComplexMatrix g) {
        NodeRec& n = nodes_[v.node];
        const ComplexMatrix& o = std::get<ComplexMatrix>(n.out[v.slot]);
        require(g.rows == o.rows && g.cols == o.cols, "tape: adjoint shape mismatch");
        ensure_adj_slots(n, v.slot);
        ComplexMatrix& a = std::get<ComplexMatrix>(n.adj[v.slot]);
        for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += g.data[i];
    }
};

using Var = Tape::Var;

}  // namespace ndmd
