#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ndmd/dmdcore.hpp"
#include "ndmd/mlp.hpp"
#include "ndmd/tape.hpp"

namespace ndmd {

/// Encoder/decoder networks around the spectral forecast layer. The exo
/// encoder is present only for control models. rank 0 means the working
/// rank is picked by a relative singular-value threshold at fit time.
struct NdmdModel {
    MlpSpec encoder_spec;
    MlpSpec decoder_spec;
    MlpSpec exo_spec;
    MlpParams encoder;
    MlpParams decoder;
    MlpParams exo_encoder;
    bool has_control = false;
    int lifted_dim = 0;  // K
    int rank = 0;        // R
    int rank_p = 0;      // P, control only
};

struct TrainConfig {
    int batch = 128;  // S
    double lr = 1e-3;
    double dropout = 0.1;
    int max_epochs = 1000;
    int patience = 50;
    int restarts = 1;  // independent inits, best kept by validation loss
    int warmup = 0;    // reconstruction-only epochs before the spectral phase
    std::uint64_t seed = 0;
    double beta = 1.0;             // weight of the eigenvalue regularizer
    double rank_threshold = 0.001; // used when the model rank is 0
};

/// Seed for the r-th independent training restart. Restart 0 keeps the
/// original stream, so single-shot runs are unaffected by the mechanism.
inline std::uint64_t restart_seed(std::uint64_t base, int r) {
    return r == 0 ? base : mix64(base, 0xC4CEB9FE1A85EC53ull + std::uint64_t(r));
}

/// Column counts of the chronological train / validation / test split.
struct Split {
    long train = 0;
    long val = 0;
    long test = 0;
};

/// Known target spectrum for the regularized objective.
struct AuxEigenvalues {
    std::vector<complexd> targets;
};

struct TrainReport {
    std::vector<double> train_losses;  // per-epoch mean batch loss
    std::vector<double> val_losses;    // per-epoch holdout forecast MSE
    std::vector<complexd> final_eigenvalues;
    long long f_clamped = 0;
    long long sigma_dropped = 0;
    int epochs_run = 0;
    int best_epoch = 0;
    double wall_seconds = 0.0;
};

/// One differentiable step: the loss value, the step's spectrum, gradients
/// shaped like the corresponding parameter sets, and degeneracy counters.
struct StepResult {
    double loss = 0.0;
    std::vector<complexd> eigenvalues;
    MlpParams encoder_grads;
    MlpParams decoder_grads;
    MlpParams exo_grads;
    double imag_ratio = 0.0;
    ClampStats clamps;
};

/// Symmetric nearest-neighbor distance between two spectra:
/// sum over each list of the modulus distance to the closest member of
/// the other list. Zero iff the underlying point sets coincide.
inline double chamfer_eig(const std::vector<complexd>& est, const std::vector<complexd>& target) {
    require(!est.empty() && !target.empty(), "chamfer_eig: empty spectrum");
    double d = 0.0;
    for (const complexd& t : target) {
        double best = std::abs(t - est[0]);
        for (std::size_t j = 1; j < est.size(); ++j) best = std::min(best, std::abs(t - est[j]));
        d += best;
    }
    for (const complexd& e : est) {
        double best = std::abs(target[0] - e);
        for (std::size_t i = 1; i < target.size(); ++i) best = std::min(best, std::abs(target[i] - e));
        d += best;
    }
    return d;
}

namespace detail {

inline RankSpec effective_rank(int fixed_rank, double threshold) {
    return fixed_rank > 0 ? RankSpec::fixed(fixed_rank) : RankSpec::threshold(threshold);
}

inline MlpSpec with_dropout(const MlpSpec& spec, double rate) {
    MlpSpec s = spec;
    s.dropout = rate;
    return s;
}

inline void check_sigma_floor(const RealMatrix& sigma, const char* what) {
    const int r = sigma.rows;
    if (r <= 0 || !(sigma(0, 0) > 0.0) || !(sigma(r - 1, 0) > 1e-12 * sigma(0, 0)))
        throw degenerate_input(std::string(what) + ": snapshot matrix is rank deficient at the working rank");
}

/// Handles into a built step graph so callers can run backward and read
/// parameter gradients.
struct StepGraph {
    MlpVars enc, dec, exo;
    Tape::Var loss;
    Tape::Var lambda;
    double imag_ratio = 0.0;
};

/// Forecast graph of the autonomous model on sampled timesteps: encode the
/// union of tau and tau+1, run the spectral layer on the pairs, forecast
/// every union timestep from the earliest one, decode, and average the
/// squared error over the union. Optionally adds the spectrum regularizer.
inline StepGraph ndmd_graph(Tape& t, const NdmdModel& model, const RealMatrix& series,
                            std::vector<long> taus, const RankSpec& rank, double dropout,
                            Rng* dropout_rng, const AuxEigenvalues* aux, double beta) {
    require(!taus.empty(), "ndmd_step_loss: no timesteps sampled");
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    require(taus.front() >= 1 && taus.back() <= series.cols - 1,
            "ndmd_step_loss: sampled timestep out of range");

    // merged union of {tau} and {tau+1}, kept sorted and distinct
    std::vector<long> uni;
    uni.reserve(2 * taus.size());
    for (long tau : taus) {
        uni.push_back(tau);
        uni.push_back(tau + 1);
    }
    std::sort(uni.begin(), uni.end());
    uni.erase(std::unique(uni.begin(), uni.end()), uni.end());

    const auto pos_of = [&uni](long u) {
        return int(std::lower_bound(uni.begin(), uni.end(), u) - uni.begin());
    };
    std::vector<int> union_cols, idx1, idx2;
    for (long u : uni) union_cols.push_back(int(u - 1));
    for (long tau : taus) {
        idx1.push_back(pos_of(tau));
        idx2.push_back(pos_of(tau + 1));
    }

    StepGraph g;
    const RealMatrix x_union = gather_cols(series, union_cols);
    g.enc = mlp_vars(t, model.encoder);
    g.dec = mlp_vars(t, model.decoder);
    const MlpSpec enc_spec = with_dropout(model.encoder_spec, dropout);
    const MlpSpec dec_spec = with_dropout(model.decoder_spec, dropout);

    Tape::Var psi_u = mlp_forward(t, g.enc, t.input(x_union), enc_spec, dropout_rng);
    Tape::Var psi1 = t.gather_cols(psi_u, idx1);
    Tape::Var psi2 = t.gather_cols(psi_u, idx2);

    Tape::SvdVars svd = t.svd_node(psi1, rank);
    check_sigma_floor(t.rval(svd.sigma), "ndmd_step_loss");

    Tape::Var gmat = t.colscale(t.matmul(psi2, svd.V), t.recip(svd.sigma));
    Tape::Var a_tilde = t.matmul(t.transpose(svd.U), gmat);
    Tape::EigVars e = t.eig_node(a_tilde);
    Tape::Var phi = t.cmatmul(t.promote_op(gmat), e.Y);

    // amplitudes through the normal equations, anchored at the earliest tau
    Tape::Var phi_h = t.chermitian(phi);
    Tape::Var gram_inv = t.cinv(t.cmatmul(phi_h, phi));
    Tape::Var anchor = t.promote_op(t.gather_cols(psi1, {0}));
    Tape::Var alpha = t.cmatmul(gram_inv, t.cmatmul(phi_h, anchor));

    std::vector<long> exponents;
    for (long u : uni) exponents.push_back(u - taus.front());
    Tape::Var w = t.spectral_weights(e.lambda, alpha, exponents);
    Tape::Var psi_hat = t.cmatmul(phi, w);
    g.imag_ratio = imag_residue_ratio(t.cval(psi_hat));

    Tape::Var x_hat = mlp_forward(t, g.dec, t.re_part(psi_hat), dec_spec, dropout_rng);
    Tape::Var mse = t.scale(t.sse_against(x_hat, x_union), 1.0 / double(uni.size()));
    if (aux != nullptr && beta > 0.0) {
        require(!aux->targets.empty(), "train_with_aux: empty target spectrum");
        g.loss = t.add(mse, t.scale(t.chamfer_node(e.lambda, aux->targets), beta));
    } else {
        g.loss = mse;
    }
    g.lambda = e.lambda;
    return g;
}

/// Forecast graph of the control model on one consecutive window
/// [start, start + pairs]: encode observations and exogenous inputs, run
/// the stacked-snapshot spectral layer, roll the forced recursion across
/// the window, decode, and average over the window's pairs + 1 timesteps.
inline StepGraph ndmdc_graph(Tape& t, const NdmdModel& model, const RealMatrix& series,
                             const RealMatrix& exo, long start, int pairs,
                             const RankSpec& rank_p, const RankSpec& rank_r, double dropout,
                             Rng* dropout_rng) {
    require(model.has_control, "ndmdc_step_loss: model has no exogenous encoder");
    require(pairs >= 1, "ndmdc_step_loss: window needs at least one pair");
    require(start >= 1 && start + pairs <= series.cols,
            "ndmdc_step_loss: window exceeds the series");
    require(exo.cols >= start + pairs - 1, "ndmdc_step_loss: exogenous series too short");

    std::vector<int> obs_cols, exo_cols;
    for (long u = start; u <= start + pairs; ++u) obs_cols.push_back(int(u - 1));
    for (long u = start; u < start + pairs; ++u) exo_cols.push_back(int(u - 1));

    StepGraph g;
    const RealMatrix x_win = gather_cols(series, obs_cols);
    g.enc = mlp_vars(t, model.encoder);
    g.dec = mlp_vars(t, model.decoder);
    g.exo = mlp_vars(t, model.exo_encoder);
    const MlpSpec enc_spec = with_dropout(model.encoder_spec, dropout);
    const MlpSpec dec_spec = with_dropout(model.decoder_spec, dropout);
    const MlpSpec exo_spec = with_dropout(model.exo_spec, dropout);

    Tape::Var psi = mlp_forward(t, g.enc, t.input(x_win), enc_spec, dropout_rng);
    Tape::Var xi = mlp_forward(t, g.exo, t.input(gather_cols(exo, exo_cols)), exo_spec, dropout_rng);

    std::vector<int> i1, i2;
    for (int j = 0; j < pairs; ++j) {
        i1.push_back(j);
        i2.push_back(j + 1);
    }
    Tape::Var psi1 = t.gather_cols(psi, i1);
    Tape::Var psi2 = t.gather_cols(psi, i2);

    const int k = model.encoder_spec.dims.back();
    const int n = model.exo_spec.dims.back();
    Tape::SvdVars so = t.svd_node(t.vconcat(psi1, xi), rank_p);
    check_sigma_floor(t.rval(so.sigma), "ndmdc_step_loss");
    Tape::Var go = t.colscale(t.matmul(psi2, so.V), t.recip(so.sigma));
    Tape::Var u1 = t.row_range(so.U, 0, k);
    Tape::Var u2 = t.row_range(so.U, k, k + n);

    Tape::SvdVars s2 = t.svd_node(psi2, rank_r);
    check_sigma_floor(t.rval(s2.sigma), "ndmdc_step_loss");

    Tape::Var proj = t.matmul(go, t.matmul(t.transpose(u1), s2.U));
    Tape::Var a_tilde = t.matmul(t.transpose(s2.U), proj);
    Tape::EigVars e = t.eig_node(a_tilde);
    Tape::Var phi = t.cmatmul(t.promote_op(proj), e.Y);
    Tape::Var b_hat = t.matmul(go, t.transpose(u2));

    Tape::Var phi_h = t.chermitian(phi);
    Tape::Var gram_inv = t.cinv(t.cmatmul(phi_h, phi));
    Tape::Var anchor = t.promote_op(t.gather_cols(psi1, {0}));
    Tape::Var alpha = t.cmatmul(gram_inv, t.cmatmul(phi_h, anchor));
    Tape::Var mode_input = t.cmatmul(gram_inv, t.cmatmul(phi_h, t.promote_op(b_hat)));

    Tape::Var forcing = t.cmatmul(mode_input, t.promote_op(xi));
    Tape::Var w = t.control_weights(e.lambda, alpha, forcing);
    Tape::Var psi_hat = t.cmatmul(phi, w);
    g.imag_ratio = imag_residue_ratio(t.cval(psi_hat));

    Tape::Var x_hat = mlp_forward(t, g.dec, t.re_part(psi_hat), dec_spec, dropout_rng);
    g.loss = t.scale(t.sse_against(x_hat, x_win), 1.0 / double(pairs + 1));
    g.lambda = e.lambda;
    return g;
}

inline MlpParams read_grads(Tape& t, const MlpVars& vars) {
    MlpParams g;
    for (Tape::Var w : vars.weights) g.weights.push_back(t.rgrad(w));
    for (Tape::Var b : vars.biases) g.biases.push_back(t.rgrad(b));
    return g;
}

inline std::vector<complexd> read_lambda(Tape& t, Tape::Var lambda) {
    const ComplexMatrix& l = t.cval(lambda);
    return std::vector<complexd>(l.data.begin(), l.data.end());
}

}  // namespace detail

/// Loss, spectrum, and parameter gradients for one sampled batch of
/// timesteps. Pass a dropout rng to run in training mode.
inline StepResult ndmd_step_loss(const NdmdModel& model, const RealMatrix& series,
                                 const std::vector<long>& taus, const TrainConfig& config,
                                 Rng* dropout_rng = nullptr,
                                 const AuxEigenvalues* aux = nullptr) {
    Tape t;
    const RankSpec rank = detail::effective_rank(model.rank, config.rank_threshold);
    detail::StepGraph g = detail::ndmd_graph(t, model, series, taus, rank, config.dropout,
                                             dropout_rng, aux, config.beta);
    t.backward(g.loss);
    StepResult r;
    r.loss = t.rval(g.loss)(0, 0);
    r.eigenvalues = detail::read_lambda(t, g.lambda);
    r.encoder_grads = detail::read_grads(t, g.enc);
    r.decoder_grads = detail::read_grads(t, g.dec);
    r.imag_ratio = g.imag_ratio;
    r.clamps = t.clamp_stats;
    return r;
}

/// Control counterpart of ndmd_step_loss on the consecutive window
/// [start, start + pairs].
inline StepResult ndmdc_step_loss(const NdmdModel& model, const RealMatrix& series,
                                  const RealMatrix& exo, long start, int pairs,
                                  const TrainConfig& config, Rng* dropout_rng = nullptr) {
    Tape t;
    const RankSpec rank_p = detail::effective_rank(model.rank_p, config.rank_threshold);
    const RankSpec rank_r = detail::effective_rank(model.rank, config.rank_threshold);
    detail::StepGraph g = detail::ndmdc_graph(t, model, series, exo, start, pairs, rank_p,
                                              rank_r, config.dropout, dropout_rng);
    t.backward(g.loss);
    StepResult r;
    r.loss = t.rval(g.loss)(0, 0);
    r.eigenvalues = detail::read_lambda(t, g.lambda);
    r.encoder_grads = detail::read_grads(t, g.enc);
    r.decoder_grads = detail::read_grads(t, g.dec);
    r.exo_grads = detail::read_grads(t, g.exo);
    r.imag_ratio = g.imag_ratio;
    r.clamps = t.clamp_stats;
    return r;
}

/// Fit the spectral model on the first anchor_len encoded timesteps in
/// eval mode. This is the non-differentiable path used for validation,
/// reporting, and test forecasts.
inline SpectralModel ndmd_spectral_fit(const NdmdModel& model, const RealMatrix& series,
                                       long anchor_len, const TrainConfig& config) {
    require(anchor_len >= 2 && anchor_len <= series.cols, "ndmd_spectral_fit: bad anchor window");
    const RealMatrix psi =
        mlp_eval(model.encoder, model.encoder_spec, col_slice(series, 0, int(anchor_len)));
    std::vector<long> taus;
    for (long u = 1; u < anchor_len; ++u) taus.push_back(u);
    return dmd_fit(build_pairs(psi, taus), detail::effective_rank(model.rank, config.rank_threshold));
}

/// Control-model analog of ndmd_spectral_fit; exo must cover at least
/// anchor_len - 1 timesteps.
inline ControlModel ndmdc_spectral_fit(const NdmdModel& model, const RealMatrix& series,
                                       const RealMatrix& exo, long anchor_len,
                                       const TrainConfig& config) {
    require(model.has_control, "ndmdc_spectral_fit: model has no exogenous encoder");
    require(anchor_len >= 2 && anchor_len <= series.cols, "ndmdc_spectral_fit: bad anchor window");
    require(exo.cols >= anchor_len - 1, "ndmdc_spectral_fit: exogenous series too short");
    const RealMatrix psi =
        mlp_eval(model.encoder, model.encoder_spec, col_slice(series, 0, int(anchor_len)));
    const RealMatrix xi =
        mlp_eval(model.exo_encoder, model.exo_spec, col_slice(exo, 0, int(anchor_len - 1)));
    return dmdc_fit(col_slice(psi, 0, int(anchor_len - 1)), col_slice(psi, 1, int(anchor_len)), xi,
                    detail::effective_rank(model.rank_p, config.rank_threshold),
                    detail::effective_rank(model.rank, config.rank_threshold));
}

/// Fit on the anchor window in eval mode, re-anchor the amplitudes over a
/// trailing stretch of the window (as many snapshots as the horizon asks
/// for, so the lookback matches the lookahead), roll the spectral model
/// forward horizon steps, and decode. Control models re-anchor on the final
/// snapshot alone and need the exogenous series through
/// anchor_len + horizon - 1.
inline RealMatrix forecast_horizon(const NdmdModel& model, const RealMatrix& series,
                                   long anchor_len, long horizon, const TrainConfig& config,
                                   const RealMatrix* exo = nullptr) {
    require(horizon >= 1, "forecast_horizon: horizon must be positive");
    const int k = model.encoder_spec.dims.back();
    RealMatrix lifted(k, int(horizon));
    if (!model.has_control) {
        const long tail = std::min(anchor_len, horizon);
        const RealMatrix psi_tail =
            mlp_eval(model.encoder, model.encoder_spec,
                     col_slice(series, int(anchor_len - tail), int(anchor_len)));
        SpectralModel sm = ndmd_spectral_fit(model, series, anchor_len, config);
        reanchor(sm, psi_tail, anchor_len);
        for (long h = 1; h <= horizon; ++h) {
            const ComplexMatrix v = dmd_forecast(sm, anchor_len + h);
            for (int i = 0; i < k; ++i) lifted(i, int(h - 1)) = v(i, 0).real();
        }
    } else {
        require(exo != nullptr, "forecast_horizon: control model needs the exogenous series");
        require(exo->cols >= anchor_len + horizon - 1,
                "forecast_horizon: exogenous series too short for horizon");
        const RealMatrix psi_end =
            mlp_eval(model.encoder, model.encoder_spec,
                     col_slice(series, int(anchor_len - 1), int(anchor_len)));
        ControlModel cm = ndmdc_spectral_fit(model, series, *exo, anchor_len, config);
        reanchor(cm, psi_end, anchor_len);
        const RealMatrix xi_all = mlp_eval(model.exo_encoder, model.exo_spec,
                                           col_slice(*exo, 0, int(anchor_len + horizon - 1)));
        for (long h = 1; h <= horizon; ++h) {
            const ComplexMatrix v = dmdc_forecast(cm, xi_all, anchor_len + h);
            for (int i = 0; i < k; ++i) lifted(i, int(h - 1)) = v(i, 0).real();
        }
    }
    return mlp_eval(model.decoder, model.decoder_spec, lifted);
}

/// Spectrum of the model fitted on the anchor window, for reporting.
inline std::vector<complexd> fitted_eigenvalues(const NdmdModel& model, const RealMatrix& series,
                                                long anchor_len, const TrainConfig& config,
                                                const RealMatrix* exo = nullptr) {
    if (!model.has_control) return ndmd_spectral_fit(model, series, anchor_len, config).lambdas;
    require(exo != nullptr, "fitted_eigenvalues: control model needs the exogenous series");
    return ndmdc_spectral_fit(model, series, *exo, anchor_len, config).lambdas;
}

namespace detail {

inline std::vector<RealMatrix*> param_ptrs(NdmdModel& m) {
    std::vector<RealMatrix*> ps;
    const auto push = [&ps](MlpParams& p) {
        for (RealMatrix& w : p.weights) ps.push_back(&w);
        for (RealMatrix& b : p.biases) ps.push_back(&b);
    };
    push(m.encoder);
    push(m.decoder);
    if (m.has_control) push(m.exo_encoder);
    return ps;
}

inline std::vector<RealMatrix> collect_grads(Tape& t, const StepGraph& g, bool control) {
    std::vector<RealMatrix> gs;
    const auto push = [&](const MlpVars& vars) {
        for (Tape::Var w : vars.weights) gs.push_back(t.rgrad(w));
        for (Tape::Var b : vars.biases) gs.push_back(t.rgrad(b));
    };
    push(g.enc);
    push(g.dec);
    if (control) push(g.exo);
    return gs;
}

/// Holdout forecast error used for early stopping: fit on the train window
/// in eval mode, forecast the validation horizon, mean squared error per
/// matrix entry.
inline double validation_mse(const NdmdModel& model, const RealMatrix& series, const Split& split,
                             const TrainConfig& config, const RealMatrix* exo) {
    const RealMatrix fc = forecast_horizon(model, series, split.train, split.val, config, exo);
    double s = 0.0;
    for (int i = 0; i < fc.rows; ++i)
        for (int j = 0; j < fc.cols; ++j) {
            const double d = fc(i, j) - series(i, int(split.train) + j);
            s += d * d;
        }
    return s / (double(fc.rows) * double(fc.cols));
}

struct ParamSnapshot {
    MlpParams encoder, decoder, exo;
};

inline ParamSnapshot snapshot(const NdmdModel& m) {
    return ParamSnapshot{m.encoder, m.decoder, m.exo_encoder};
}

inline void restore(NdmdModel& m, const ParamSnapshot& s) {
    m.encoder = s.encoder;
    m.decoder = s.decoder;
    m.exo_encoder = s.exo;
}

/// Shared optimization loop. step_fn builds one graph on the given tape
/// using the model's current parameters and the loop's rng, and returns
/// the graph handles. Early stopping tracks validation forecast error.
template <typename StepFn>
inline TrainReport train_loop(NdmdModel& model, const RealMatrix& series, const Split& split,
                              const TrainConfig& config, const RealMatrix* exo, StepFn&& step_fn) {
    require(split.train >= 2 && split.train <= series.cols, "train: bad training split");
    require(split.train + split.val <= series.cols, "train: splits exceed the series");
    const auto t0 = std::chrono::steady_clock::now();

    TrainReport report;
    Rng rng(config.seed);
    AdamState adam;
    adam.lr = config.lr;
    const std::vector<RealMatrix*> params = param_ptrs(model);

    const long pairs_avail = split.train - 1;
    const int s_eff = int(std::min<long>(config.batch, pairs_avail));
    require(s_eff >= 1, "train: no snapshot pairs in the training split");
    const int batches = int((pairs_avail + s_eff - 1) / s_eff);

    // A collapsed code makes the spectral layer nearly singular and can trap
    // the optimizer, so the autoencoder is settled on plain reconstruction
    // first. The spectral phase below then starts from a faithful embedding.
    if (config.warmup > 0) {
        AdamState warm;
        warm.lr = config.lr;
        std::vector<RealMatrix*> ae_params;
        for (RealMatrix& w : model.encoder.weights) ae_params.push_back(&w);
        for (RealMatrix& b : model.encoder.biases) ae_params.push_back(&b);
        for (RealMatrix& w : model.decoder.weights) ae_params.push_back(&w);
        for (RealMatrix& b : model.decoder.biases) ae_params.push_back(&b);
        const MlpSpec enc_spec = with_dropout(model.encoder_spec, config.dropout);
        const MlpSpec dec_spec = with_dropout(model.decoder_spec, config.dropout);
        for (int epoch = 1; epoch <= config.warmup; ++epoch) {
            for (int b = 0; b < batches; ++b) {
                Tape t;
                const std::vector<int> picks =
                    rng.sample_without_replacement(int(split.train), s_eff);
                const RealMatrix x = gather_cols(series, picks);
                const MlpVars ev = mlp_vars(t, model.encoder);
                const MlpVars dv = mlp_vars(t, model.decoder);
                const Tape::Var code = mlp_forward(t, ev, t.input(x), enc_spec, &rng);
                const Tape::Var xhat = mlp_forward(t, dv, code, dec_spec, &rng);
                const Tape::Var loss =
                    t.scale(t.sse_against(xhat, x), 1.0 / double(picks.size()));
                t.backward(loss);
                std::vector<RealMatrix> grads;
                grads.reserve(ae_params.size());
                for (const Tape::Var v : ev.weights) grads.push_back(t.rgrad(v));
                for (const Tape::Var v : ev.biases) grads.push_back(t.rgrad(v));
                for (const Tape::Var v : dv.weights) grads.push_back(t.rgrad(v));
                for (const Tape::Var v : dv.biases) grads.push_back(t.rgrad(v));
                warm.step(ae_params, grads);
            }
        }
    }

    double best_val = std::numeric_limits<double>::infinity();
    ParamSnapshot best = snapshot(model);
    int since_best = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int b = 0; b < batches; ++b) {
            Tape t;
            StepGraph g = step_fn(t, rng, s_eff);
            const double loss = t.rval(g.loss)(0, 0);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "train: non-finite loss " << loss << " at epoch " << epoch << " batch "
                    << (b + 1) << "; spectrum moduli:";
                for (const complexd& l : read_lambda(t, g.lambda)) msg << ' ' << std::abs(l);
                throw numeric_failure(msg.str());
            }
            epoch_loss += loss;
            t.backward(g.loss);
            adam.step(params, collect_grads(t, g, model.has_control));
            report.f_clamped += t.clamp_stats.f_clamped;
            report.sigma_dropped += t.clamp_stats.sigma_dropped;
        }
        report.train_losses.push_back(epoch_loss / batches);
        report.epochs_run = epoch;

        if (split.val > 0) {
            const double val = validation_mse(model, series, split, config, exo);
            report.val_losses.push_back(val);
            if (val < best_val) {
                best_val = val;
                best = snapshot(model);
                report.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= config.patience) {
                break;
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if (split.val > 0 && report.best_epoch > 0) restore(model, best);

    report.final_eigenvalues = fitted_eigenvalues(model, series, split.train, config, exo);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace detail

/// Batch-sampled training of the autonomous model. aux, when given with a
/// positive beta, adds the spectrum regularizer to every step loss.
inline TrainReport train_with_aux(NdmdModel& model, const RealMatrix& series, const Split& split,
                                  const TrainConfig& config, const AuxEigenvalues* aux) {
    require(!model.has_control, "train: use train_control for control models");
    const RankSpec rank = detail::effective_rank(model.rank, config.rank_threshold);
    const bool regularized = aux != nullptr && config.beta > 0.0;
    if (model.rank > 0)
        require(std::min<long>(config.batch, split.train - 1) >= model.rank,
                "train: batch smaller than the working rank");
    return detail::train_loop(
        model, series, split, config, nullptr,
        [&](Tape& t, Rng& rng, int s_eff) {
            const std::vector<int> picks =
                rng.sample_without_replacement(int(split.train - 1), s_eff);
            std::vector<long> taus;
            taus.reserve(picks.size());
            for (int p : picks) taus.push_back(long(p) + 1);
            return detail::ndmd_graph(t, model, series, taus, rank, config.dropout, &rng,
                                      regularized ? aux : nullptr, config.beta);
        });
}

inline TrainReport train(NdmdModel& model, const RealMatrix& series, const Split& split,
                         const TrainConfig& config) {
    return train_with_aux(model, series, split, config, nullptr);
}

/// Window-sampled training of the control model.
inline TrainReport train_control(NdmdModel& model, const RealMatrix& series, const RealMatrix& exo,
                                 const Split& split, const TrainConfig& config) {
    require(model.has_control, "train_control: model has no exogenous encoder");
    const RankSpec rank_p = detail::effective_rank(model.rank_p, config.rank_threshold);
    const RankSpec rank_r = detail::effective_rank(model.rank, config.rank_threshold);
    return detail::train_loop(
        model, series, split, config, &exo,
        [&](Tape& t, Rng& rng, int s_eff) {
            // uniform window start in [1, T_train - S]
            const long start = 1 + long(rng.below(int(split.train - s_eff)));
            return detail::ndmdc_graph(t, model, series, exo, start, s_eff, rank_p, rank_r,
                                       config.dropout, &rng);
        });
}

/// Glorot-initialized autonomous model with four-layer encoder/decoder.
inline NdmdModel make_ndmd_model(int obs_dim, int lifted_dim, int rank, int hidden, Rng& rng,
                                 Activation act = Activation::tanh_fn) {
    require(rank <= lifted_dim, "make_ndmd_model: rank exceeds the lifted dimension");
    NdmdModel m;
    m.encoder_spec = MlpSpec::four_layer(obs_dim, hidden, lifted_dim, act);
    m.decoder_spec = MlpSpec::four_layer(lifted_dim, hidden, obs_dim, act);
    m.encoder = mlp_init(m.encoder_spec, rng);
    m.decoder = mlp_init(m.decoder_spec, rng);
    m.lifted_dim = lifted_dim;
    m.rank = rank;
    return m;
}

/// Control model with an extra exogenous encoder.
inline NdmdModel make_ndmdc_model(int obs_dim, int exo_dim, int lifted_dim, int exo_lifted,
                                  int rank, int rank_p, int hidden, Rng& rng,
                                  Activation act = Activation::tanh_fn) {
    NdmdModel m = make_ndmd_model(obs_dim, lifted_dim, rank, hidden, rng, act);
    m.exo_spec = MlpSpec::four_layer(exo_dim, hidden, exo_lifted, act);
    m.exo_encoder = mlp_init(m.exo_spec, rng);
    m.rank_p = rank_p;
    m.has_control = true;
    return m;
}

/// Checkpoint serialization: network parameters plus the spectral
/// hyperparameters needed to rebuild the forecast path.
inline nlohmann::json model_to_json(const NdmdModel& m) {
    nlohmann::json j{{"kind", m.has_control ? "ndmdc" : "ndmd"},
                     {"lifted_dim", m.lifted_dim},
                     {"rank", m.rank},
                     {"rank_p", m.rank_p},
                     {"encoder_spec", spec_to_json(m.encoder_spec)},
                     {"decoder_spec", spec_to_json(m.decoder_spec)},
                     {"encoder", mlp_to_json(m.encoder)},
                     {"decoder", mlp_to_json(m.decoder)}};
    if (m.has_control) {
        j["exo_spec"] = spec_to_json(m.exo_spec);
        j["exo_encoder"] = mlp_to_json(m.exo_encoder);
    }
    return j;
}

inline NdmdModel model_from_json(const nlohmann::json& j) {
    NdmdModel m;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "ndmd" && kind != "ndmdc")
        throw io_error("model_from_json: unknown checkpoint kind " + kind);
    m.has_control = kind == "ndmdc";
    m.lifted_dim = j.at("lifted_dim").get<int>();
    m.rank = j.at("rank").get<int>();
    m.rank_p = j.at("rank_p").get<int>();
    m.encoder_spec = spec_from_json(j.at("encoder_spec"));
    m.decoder_spec = spec_from_json(j.at("decoder_spec"));
    m.encoder = mlp_from_json(j.at("encoder"));
    m.decoder = mlp_from_json(j.at("decoder"));
    if (m.has_control) {
        m.exo_spec = spec_from_json(j.at("exo_spec"));
        m.exo_encoder = mlp_from_json(j.at("exo_encoder"));
    }
    return m;
}

}  // namespace ndmd
