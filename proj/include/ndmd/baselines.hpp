#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ndmd/dmdcore.hpp"
#include "ndmd/mlp.hpp"
#include "ndmd/ndmd.hpp"

namespace ndmd {

/// Common interface of the autonomous reference models. fit sees the series
/// up to the end of the validation split; analytic models use all of it,
/// gradient-trained ones optimize on the train window and early-stop on the
/// validation forecast. forecast continues past the fit window.
class Forecaster {
public:
    virtual ~Forecaster() = default;
    virtual std::string name() const = 0;
    virtual void fit(const RealMatrix& series, const Split& split) = 0;
    virtual RealMatrix forecast(long horizon) = 0;
    /// Spectral models report their discrete-time spectrum, others nothing.
    virtual std::vector<complexd> eigenvalues() const { return {}; }
};

namespace detail {

inline long fit_window(const RealMatrix& series, const Split& split) {
    const long n = split.train + split.val;
    require(n >= 2 && n <= series.cols, "Forecaster::fit: bad split for this series");
    return n;
}

inline std::vector<long> window_taus(long anchor_len) {
    std::vector<long> taus;
    taus.reserve(std::size_t(anchor_len - 1));
    for (long u = 1; u < anchor_len; ++u) taus.push_back(u);
    return taus;
}

/// Full-batch Adam with optional early stopping on a holdout version of the
/// model's own objective. build assembles the epoch's loss graph and appends
/// the parameter leaves to vars in the same order as params. Returns the
/// per-epoch training losses.
template <typename BuildFn, typename ValidateFn>
inline std::vector<double> adam_fit(const std::vector<RealMatrix*>& params,
                                    const TrainConfig& config, bool use_val, BuildFn&& build,
                                    ValidateFn&& validate) {
    AdamState adam;
    adam.lr = config.lr;
    std::vector<double> losses;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<RealMatrix> best;
    int since_best = 0;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        Tape t;
        std::vector<Var> vars;
        const Var loss = build(t, vars);
        const double value = t.rval(loss)(0, 0);
        if (!std::isfinite(value))
            throw numeric_failure("baseline fit: non-finite loss at epoch " +
                                  std::to_string(epoch));
        losses.push_back(value);
        t.backward(loss);
        std::vector<RealMatrix> grads;
        grads.reserve(vars.size());
        for (Var v : vars) grads.push_back(t.rgrad(v));
        adam.step(params, grads);
        if (!use_val) continue;
        const double val = validate();
        if (val < best_val) {
            best_val = val;
            best.clear();
            for (const RealMatrix* p : params) best.push_back(*p);
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    if (use_val && !best.empty())
        for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best[i];
    return losses;
}

inline double window_mse(const RealMatrix& pred, const RealMatrix& series, long col0) {
    double s = 0.0;
    for (int i = 0; i < pred.rows; ++i)
        for (int j = 0; j < pred.cols; ++j) {
            const double d = pred(i, j) - series(i, int(col0) + j);
            s += d * d;
        }
    return s / (double(pred.rows) * double(pred.cols));
}

}  // namespace detail

/// Exact dynamic mode decomposition on the raw observations at a chosen
/// working rank.
class DmdForecaster final : public Forecaster {
public:
    explicit DmdForecaster(RankSpec rank, std::string label = "DMD")
        : rank_(rank), label_(std::move(label)) {}

    std::string name() const override { return label_; }

    void fit(const RealMatrix& series, const Split& split) override {
        anchor_len_ = detail::fit_window(series, split);
        rows_ = series.rows;
        window_ = col_slice(series, 0, int(anchor_len_));
        model_ = dmd_fit(build_pairs(window_, detail::window_taus(anchor_len_)), rank_);
        fitted_ = true;
    }

    RealMatrix forecast(long horizon) override {
        require(fitted_, "DmdForecaster::forecast: fit first");
        // Forecasts extrapolate from the end of the fitted window, like the
        // rollout baselines do, with the amplitudes re-fitted over a tail as
        // long as the horizon.
        const long tail = std::min(anchor_len_, horizon);
        SpectralModel m = model_;
        reanchor(m, col_slice(window_, int(anchor_len_ - tail), int(anchor_len_)), anchor_len_);
        RealMatrix out(rows_, int(horizon));
        for (long h = 1; h <= horizon; ++h) {
            const ComplexMatrix v = dmd_forecast(m, anchor_len_ + h);
            for (int i = 0; i < rows_; ++i) out(i, int(h - 1)) = v(i, 0).real();
        }
        return out;
    }

    std::vector<complexd> eigenvalues() const override { return model_.lambdas; }

private:
    RankSpec rank_;
    std::string label_;
    SpectralModel model_;
    RealMatrix window_;
    long anchor_len_ = 0;
    int rows_ = 0;
    bool fitted_ = false;
};

/// Extended DMD over the quadratic monomial dictionary: the observations
/// are lifted, the spectral model is fitted in dictionary space, and the
/// forecast reads back the identity block of the dictionary.
class EdmdForecaster final : public Forecaster {
public:
    explicit EdmdForecaster(RankSpec rank, std::string label = "EDMD")
        : rank_(rank), label_(std::move(label)) {}

    std::string name() const override { return label_; }

    void fit(const RealMatrix& series, const Split& split) override {
        anchor_len_ = detail::fit_window(series, split);
        rows_ = series.rows;
        lifted_ = edmd_lift(col_slice(series, 0, int(anchor_len_)));
        model_ = dmd_fit(build_pairs(lifted_, detail::window_taus(anchor_len_)), rank_);
        fitted_ = true;
    }

    RealMatrix forecast(long horizon) override {
        require(fitted_, "EdmdForecaster::forecast: fit first");
        const long tail = std::min(anchor_len_, horizon);
        SpectralModel m = model_;
        reanchor(m, col_slice(lifted_, int(anchor_len_ - tail), int(anchor_len_)), anchor_len_);
        RealMatrix out(rows_, int(horizon));
        for (long h = 1; h <= horizon; ++h) {
            const ComplexMatrix v = dmd_forecast(m, anchor_len_ + h);
            for (int i = 0; i < rows_; ++i) out(i, int(h - 1)) = v(i, 0).real();
        }
        return out;
    }

    std::vector<complexd> eigenvalues() const override { return model_.lambdas; }

private:
    RankSpec rank_;
    std::string label_;
    SpectralModel model_;
    RealMatrix lifted_;
    long anchor_len_ = 0;
    int rows_ = 0;
    bool fitted_ = false;
};

/// One-lag vector autoregression with an intercept, fitted by least squares
/// and rolled out closed loop.
class ArForecaster final : public Forecaster {
public:
    std::string name() const override { return "AR"; }

    void fit(const RealMatrix& series, const Split& split) override {
        const long n = detail::fit_window(series, split);
        const int m = series.rows;
        const int pairs = int(n - 1);
        RealMatrix x1_aug(m + 1, pairs);
        RealMatrix x2(m, pairs);
        for (int j = 0; j < pairs; ++j) {
            for (int i = 0; i < m; ++i) {
                x1_aug(i, j) = series(i, j);
                x2(i, j) = series(i, j + 1);
            }
            x1_aug(m, j) = 1.0;
        }
        w_ = matmul(x2, pinv(x1_aug));
        state_ = RealMatrix(m, 1);
        for (int i = 0; i < m; ++i) state_(i, 0) = series(i, int(n - 1));
        fitted_ = true;
    }

    RealMatrix forecast(long horizon) override {
        require(fitted_, "ArForecaster::forecast: fit first");
        const int m = state_.rows;
        RealMatrix out(m, int(horizon));
        RealMatrix x = state_;
        for (long h = 0; h < horizon; ++h) {
            RealMatrix nx(m, 1);
            for (int i = 0; i < m; ++i) {
                double v = w_(i, m);
                for (int j = 0; j < m; ++j) v += w_(i, j) * x(j, 0);
                nx(i, 0) = v;
            }
            x = nx;
            for (int i = 0; i < m; ++i) out(i, int(h)) = x(i, 0);
        }
        return out;
    }

private:
    RealMatrix w_;      // m x (m + 1), last column is the intercept
    RealMatrix state_;  // last observed column of the fit window
    bool fitted_ = false;
};

/// Feed-forward one-step predictor trained on adjacent pairs and rolled out
/// closed loop in observation space.
class NnForecaster final : public Forecaster {
public:
    NnForecaster(int hidden, TrainConfig config) : hidden_(hidden), config_(config) {}

    std::string name() const override { return "NN"; }

    void fit(const RealMatrix& series, const Split& split) override {
        detail::fit_window(series, split);
        const int m = series.rows;
        spec_ = MlpSpec::four_layer(m, hidden_, m, Activation::tanh_fn, 0.0);

        const int pairs = int(split.train - 1);
        require(pairs >= 1, "NnForecaster::fit: no training pairs");
        const RealMatrix x1 = col_slice(series, 0, pairs);
        const RealMatrix x2 = col_slice(series, 1, pairs + 1);

        const auto validate = [&] {
            // one-step error on the validation pairs
            const RealMatrix x1v = col_slice(series, int(split.train - 1),
                                             int(split.train + split.val - 1));
            return detail::window_mse(mlp_eval(params_, spec_, x1v), series, split.train);
        };

        // independent inits, keeping the restart the holdout prefers
        const int tries = split.val > 0 ? std::max(1, config_.restarts) : 1;
        double best_score = std::numeric_limits<double>::infinity();
        MlpParams best_params;
        std::vector<double> best_losses;
        for (int r = 0; r < tries; ++r) {
            Rng init(restart_seed(config_.seed, r));
            params_ = mlp_init(spec_, init);
            std::vector<RealMatrix*> params;
            for (RealMatrix& w : params_.weights) params.push_back(&w);
            for (RealMatrix& b : params_.biases) params.push_back(&b);
            losses_ = detail::adam_fit(
                params, config_, split.val > 0,
                [&](Tape& t, std::vector<Var>& vars) {
                    const MlpVars v = mlp_vars(t, params_);
                    vars.insert(vars.end(), v.weights.begin(), v.weights.end());
                    vars.insert(vars.end(), v.biases.begin(), v.biases.end());
                    const Var y = mlp_forward(t, v, t.input(x1), spec_, nullptr);
                    return t.scale(t.sse_against(y, x2), 1.0 / double(pairs));
                },
                validate);
            const double score = split.val > 0 ? validate() : losses_.back();
            if (score < best_score) {
                best_score = score;
                best_params = params_;
                best_losses = losses_;
            }
        }
        params_ = best_params;
        losses_ = best_losses;

        state_ = col_of_as_matrix(series, split.train + split.val - 1);
        fitted_ = true;
    }

    RealMatrix forecast(long horizon) override {
        require(fitted_, "NnForecaster::forecast: fit first");
        return rollout(state_, horizon);
    }

    const std::vector<double>& training_losses() const { return losses_; }

private:
    static RealMatrix col_of_as_matrix(const RealMatrix& series, long col) {
        return RealMatrix::col_vector(col_of(series, int(col)));
    }

    RealMatrix rollout(RealMatrix x, long horizon) const {
        RealMatrix out(x.rows, int(horizon));
        for (long h = 0; h < horizon; ++h) {
            x = mlp_eval(params_, spec_, x);
            for (int i = 0; i < x.rows; ++i) out(i, int(h)) = x(i, 0);
        }
        return out;
    }

    int hidden_;
    TrainConfig config_;
    MlpSpec spec_;
    MlpParams params_;
    RealMatrix state_;
    std::vector<double> losses_;
    bool fitted_ = false;
};

/// Autoencoder with a linear latent transition, trained on the next-step
/// observation error and rolled out in latent space.
class AeArForecaster : public Forecaster {
public:
    AeArForecaster(int lifted, int hidden, TrainConfig config)
        : lifted_(lifted), hidden_(hidden), config_(config) {}

    std::string name() const override { return "AEAR"; }

    void fit(const RealMatrix& series, const Split& split) override {
        detail::fit_window(series, split);
        const int pairs = int(split.train - 1);
        require(pairs >= 1, "AeArForecaster::fit: no training pairs");
        const RealMatrix x1 = col_slice(series, 0, pairs);
        const RealMatrix x2 = col_slice(series, 1, pairs + 1);

        const auto validate = [&] {
            // one-step error on the validation pairs
            const RealMatrix x1v = col_slice(series, int(split.train - 1),
                                             int(split.train + split.val - 1));
            const RealMatrix pred =
                mlp_eval(decoder_, dec_spec_, matmul(a_, mlp_eval(encoder_, enc_spec_, x1v)));
            return detail::window_mse(pred, series, split.train);
        };

        run_restarts(series, split, [&] {
            return detail::adam_fit(
                param_list(), config_, split.val > 0,
                [&](Tape& t, std::vector<Var>& vars) {
                    const Handles h = register_params(t, vars);
                    const Var psi1 = mlp_forward(t, h.enc, t.input(x1), enc_spec_, nullptr);
                    const Var pred = t.matmul(h.a, psi1);
                    const Var xhat = mlp_forward(t, h.dec, pred, dec_spec_, nullptr);
                    return t.scale(t.sse_against(xhat, x2), 1.0 / double(pairs));
                },
                validate);
        }, validate);

        state_ = col_slice(series, int(split.train + split.val - 1),
                           int(split.train + split.val));
        fitted_ = true;
    }

    RealMatrix forecast(long horizon) override {
        require(fitted_, "AeArForecaster::forecast: fit first");
        return rollout(state_, horizon);
    }

    std::vector<complexd> eigenvalues() const override {
        require(fitted_, "AeArForecaster::eigenvalues: fit first");
        return eig(a_).lambda;
    }

    const std::vector<double>& training_losses() const { return losses_; }

protected:
    struct Handles {
        MlpVars enc, dec;
        Var a;
    };

    /// Fit from several independent inits and keep the nets the holdout
    /// score prefers. Without a holdout there is no selection signal, so a
    /// single fit is run.
    template <typename FitFn, typename ScoreFn>
    void run_restarts(const RealMatrix& series, const Split& split, FitFn&& fit_once,
                      ScoreFn&& score) {
        const int tries = split.val > 0 ? std::max(1, config_.restarts) : 1;
        double best_score = std::numeric_limits<double>::infinity();
        MlpParams best_enc, best_dec;
        RealMatrix best_a;
        std::vector<double> best_losses;
        for (int r = 0; r < tries; ++r) {
            init_nets(series.rows, r);
            losses_ = fit_once();
            const double current = split.val > 0 ? score() : losses_.back();
            if (current < best_score) {
                best_score = current;
                best_enc = encoder_;
                best_dec = decoder_;
                best_a = a_;
                best_losses = losses_;
            }
        }
        encoder_ = best_enc;
        decoder_ = best_dec;
        a_ = best_a;
        losses_ = best_losses;
    }

    void init_nets(int obs_dim, int restart) {
        enc_spec_ = MlpSpec::four_layer(obs_dim, hidden_, lifted_, Activation::tanh_fn, 0.0);
        dec_spec_ = MlpSpec::four_layer(lifted_, hidden_, obs_dim, Activation::tanh_fn, 0.0);
        Rng init(restart_seed(config_.seed, restart));
        encoder_ = mlp_init(enc_spec_, init);
        decoder_ = mlp_init(dec_spec_, init);
        // near-identity contraction, so early latent rollouts stay bounded
        a_ = RealMatrix::identity(lifted_);
        for (double& v : a_.data) v = 0.9 * v + 0.1 * init.uniform(-1.0, 1.0);
    }

    std::vector<RealMatrix*> param_list() {
        std::vector<RealMatrix*> params;
        for (RealMatrix& w : encoder_.weights) params.push_back(&w);
        for (RealMatrix& b : encoder_.biases) params.push_back(&b);
        params.push_back(&a_);
        for (RealMatrix& w : decoder_.weights) params.push_back(&w);
        for (RealMatrix& b : decoder_.biases) params.push_back(&b);
        return params;
    }

    Handles register_params(Tape& t, std::vector<Var>& vars) const {
        Handles h;
        h.enc = mlp_vars(t, encoder_);
        h.dec = mlp_vars(t, decoder_);
        h.a = t.input(a_);
        vars.insert(vars.end(), h.enc.weights.begin(), h.enc.weights.end());
        vars.insert(vars.end(), h.enc.biases.begin(), h.enc.biases.end());
        vars.push_back(h.a);
        vars.insert(vars.end(), h.dec.weights.begin(), h.dec.weights.end());
        vars.insert(vars.end(), h.dec.biases.begin(), h.dec.biases.end());
        return h;
    }

    RealMatrix rollout(const RealMatrix& x0, long horizon) const {
        RealMatrix psi = mlp_eval(encoder_, enc_spec_, x0);
        RealMatrix out(dec_spec_.dims.back(), int(horizon));
        for (long h = 0; h < horizon; ++h) {
            psi = matmul(a_, psi);
            const RealMatrix x = mlp_eval(decoder_, dec_spec_, psi);
            for (int i = 0; i < x.rows; ++i) out(i, int(h)) = x(i, 0);
        }
        return out;
    }

    int lifted_;
    int hidden_;
    TrainConfig config_;
    MlpSpec enc_spec_, dec_spec_;
    MlpParams encoder_, decoder_;
    RealMatrix a_;
    RealMatrix state_;
    std::vector<double> losses_;
    bool fitted_ = false;
};

/// Same architecture as AeArForecaster but trained on reconstruction plus
/// latent one-step linearity, weighted equally.
class LkisForecaster final : public AeArForecaster {
public:
    LkisForecaster(int lifted, int hidden, TrainConfig config)
        : AeArForecaster(lifted, hidden, config) {}

    std::string name() const override { return "LKIS"; }

    void fit(const RealMatrix& series, const Split& split) override {
        detail::fit_window(series, split);
        const int cols = int(split.train);
        const int pairs = cols - 1;
        require(pairs >= 1, "LkisForecaster::fit: no training pairs");
        const RealMatrix x_all = col_slice(series, 0, cols);
        std::vector<int> i1, i2;
        for (int j = 0; j < pairs; ++j) {
            i1.push_back(j);
            i2.push_back(j + 1);
        }

        const auto validate = [&] {
            // the composite objective on the validation window
            const RealMatrix xv = col_slice(series, int(split.train - 1),
                                            int(split.train + split.val));
            const RealMatrix psi = mlp_eval(encoder_, enc_spec_, xv);
            const RealMatrix gap = sub(col_slice(psi, 1, psi.cols),
                                       matmul(a_, col_slice(psi, 0, psi.cols - 1)));
            const double lin = frobenius_norm(gap);
            const RealMatrix rec = sub(mlp_eval(decoder_, dec_spec_, psi), xv);
            const double re = frobenius_norm(rec);
            return lin * lin / double(split.val) + re * re / double(split.val + 1);
        };

        run_restarts(series, split, [&] {
            return detail::adam_fit(
                param_list(), config_, split.val > 0,
                [&](Tape& t, std::vector<Var>& vars) {
                    const Handles h = register_params(t, vars);
                    const Var psi = mlp_forward(t, h.enc, t.input(x_all), enc_spec_, nullptr);
                    const Var gap = t.sub(t.gather_cols(psi, i2),
                                          t.matmul(h.a, t.gather_cols(psi, i1)));
                    const Var linearity = t.scale(t.sse_against(gap, RealMatrix(lifted_, pairs)),
                                                  1.0 / double(pairs));
                    const Var recon = mlp_forward(t, h.dec, psi, dec_spec_, nullptr);
                    const Var recon_err = t.scale(t.sse_against(recon, x_all), 1.0 / double(cols));
                    return t.add(linearity, recon_err);
                },
                validate);
        }, validate);

        state_ = col_slice(series, int(split.train + split.val - 1),
                           int(split.train + split.val));
        fitted_ = true;
    }
};

}  // namespace ndmd
