#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "ndmd/errors.hpp"
#include "ndmd/matrix.hpp"
#include "ndmd/rng.hpp"
#include "ndmd/tape.hpp"

namespace ndmd {

enum class Activation { tanh_fn, relu_fn };

/// Fully connected network shape. dims = {in, hidden..., out}; the default
/// "four layer" construction is input, two equal hidden layers, output.
struct MlpSpec {
    std::vector<int> dims;
    Activation act = Activation::tanh_fn;
    double dropout = 0.1;  // rate applied after each hidden activation

    static MlpSpec four_layer(int in, int hidden, int out,
                              Activation act = Activation::tanh_fn, double dropout = 0.1) {
        MlpSpec s;
        s.dims = {in, hidden, hidden, out};
        s.act = act;
        s.dropout = dropout;
        return s;
    }

    int layers() const { return int(dims.size()) - 1; }
};

/// Weights (out x in) and biases (out x 1) per affine layer.
struct MlpParams {
    std::vector<RealMatrix> weights;
    std::vector<RealMatrix> biases;
};

/// Glorot uniform initialization, zero biases.
inline MlpParams mlp_init(const MlpSpec& spec, Rng& rng) {
    require(spec.dims.size() >= 2, "mlp_init: need at least input and output dims");
    MlpParams p;
    for (int l = 0; l < spec.layers(); ++l) {
        const int fin = spec.dims[l], fout = spec.dims[l + 1];
        require(fin > 0 && fout > 0, "mlp_init: layer dims must be positive");
        const double limit = std::sqrt(6.0 / double(fin + fout));
        RealMatrix w(fout, fin);
        for (double& v : w.data) v = rng.uniform(-limit, limit);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(fout, 1);
    }
    return p;
}

/// Parameters registered on a tape for one training step.
struct MlpVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

inline MlpVars mlp_vars(Tape& tape, const MlpParams& p) {
    MlpVars v;
    for (const RealMatrix& w : p.weights) v.weights.push_back(tape.input(w));
    for (const RealMatrix& b : p.biases) v.biases.push_back(tape.input(b));
    return v;
}

/// Forward pass on the tape, column-batched: x is (in x batch). When
/// dropout_rng is non-null an inverted dropout mask is drawn per hidden
/// activation; at evaluation time pass nullptr and the expected scale is
/// already correct.
inline Var mlp_forward(Tape& tape, const MlpVars& vars, Var x, const MlpSpec& spec,
                       Rng* dropout_rng) {
    const int layers = spec.layers();
    Var h = x;
    for (int l = 0; l < layers; ++l) {
        h = tape.add_col(tape.matmul(vars.weights[l], h), vars.biases[l]);
        if (l + 1 == layers) break;
        h = (spec.act == Activation::tanh_fn) ? tape.tanh_op(h) : tape.relu_op(h);
        if (dropout_rng && spec.dropout > 0.0) {
            const RealMatrix& cur = tape.rval(h);
            RealMatrix mask(cur.rows, cur.cols);
            const double keep = 1.0 - spec.dropout;
            for (double& m : mask.data)
                m = (dropout_rng->uniform01() >= spec.dropout) ? 1.0 / keep : 0.0;
            h = tape.hadamard_const(h, std::move(mask));
        }
    }
    return h;
}

/// Plain evaluation without a tape (no dropout).
inline RealMatrix mlp_eval(const MlpParams& p, const MlpSpec& spec, const RealMatrix& x) {
    require(int(p.weights.size()) == spec.layers(), "mlp_eval: params do not match spec");
    RealMatrix h = x;
    for (int l = 0; l < spec.layers(); ++l) {
        h = matmul(p.weights[l], h);
        for (int i = 0; i < h.rows; ++i)
            for (int j = 0; j < h.cols; ++j) h(i, j) += p.biases[l](i, 0);
        if (l + 1 == spec.layers()) break;
        if (spec.act == Activation::tanh_fn)
            for (double& v : h.data) v = std::tanh(v);
        else
            for (double& v : h.data)
                if (v < 0.0) v = 0.0;
    }
    return h;
}

/// Adam over an arbitrary flat list of parameter matrices.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<RealMatrix> m, v;

    void step(const std::vector<RealMatrix*>& params, const std::vector<RealMatrix>& grads) {
        require(params.size() == grads.size(), "AdamState::step: list size mismatch");
        if (m.empty()) {
            for (const RealMatrix* p : params) {
                m.emplace_back(p->rows, p->cols);
                v.emplace_back(p->rows, p->cols);
            }
        }
        require(m.size() == params.size(), "AdamState::step: parameter count changed");
        ++t;
        const double c1 = 1.0 - std::pow(beta1, double(t));
        const double c2 = 1.0 - std::pow(beta2, double(t));
        for (std::size_t k = 0; k < params.size(); ++k) {
            RealMatrix& p = *params[k];
            const RealMatrix& g = grads[k];
            require(p.same_shape(g), "AdamState::step: gradient shape mismatch");
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                m[k].data[i] = beta1 * m[k].data[i] + (1.0 - beta1) * g.data[i];
                v[k].data[i] = beta2 * v[k].data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
                const double mhat = m[k].data[i] / c1;
                const double vhat = v[k].data[i] / c2;
                p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

// ---- JSON (de)serialization -----------------------------------------------

inline nlohmann::json matrix_to_json(const RealMatrix& m) {
    nlohmann::json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["data"] = m.data;
    return j;
}

inline RealMatrix matrix_from_json(const nlohmann::json& j) {
    RealMatrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    const auto& d = j.at("data");
    if (int(d.size()) != m.rows * m.cols)
        throw io_error("matrix_from_json: data length does not match rows*cols");
    m.data = d.get<std::vector<double>>();
    m.check_finite("matrix_from_json");
    return m;
}

inline nlohmann::json mlp_to_json(const MlpParams& p) {
    nlohmann::json j;
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    for (const RealMatrix& w : p.weights) j["weights"].push_back(matrix_to_json(w));
    for (const RealMatrix& b : p.biases) j["biases"].push_back(matrix_to_json(b));
    return j;
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
    MlpParams p;
    for (const auto& w : j.at("weights")) p.weights.push_back(matrix_from_json(w));
    for (const auto& b : j.at("biases")) p.biases.push_back(matrix_from_json(b));
    if (p.weights.size() != p.biases.size())
        throw io_error("mlp_from_json: weight/bias count mismatch");
    return p;
}

inline nlohmann::json spec_to_json(const MlpSpec& s) {
    nlohmann::json j;
    j["dims"] = s.dims;
    j["act"] = (s.act == Activation::tanh_fn) ? "tanh" : "relu";
    j["dropout"] = s.dropout;
    return j;
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
    MlpSpec s;
    s.dims = j.at("dims").get<std::vector<int>>();
    const std::string a = j.at("act").get<std::string>();
    if (a == "tanh")
        s.act = Activation::tanh_fn;
    else if (a == "relu")
        s.act = Activation::relu_fn;
    else
        throw io_error("spec_from_json: unknown activation '" + a + "'");
    s.dropout = j.at("dropout").get<double>();
    return s;
}

}  // namespace ndmd
