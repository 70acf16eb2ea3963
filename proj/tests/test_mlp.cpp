#include <gtest/gtest.h>

#include "ndmd/mlp.hpp"
#include "oracles.hpp"

using namespace ndmd;
using testutil::gaussian_matrix;

TEST(Mlp, GlorotInitializationRespectsLimits) {
    Rng rng(61);
    const MlpSpec spec = MlpSpec::four_layer(7, 32, 3);
    const MlpParams p = mlp_init(spec, rng);
    ASSERT_EQ(int(p.weights.size()), 3);
    EXPECT_EQ(p.weights[0].rows, 32);
    EXPECT_EQ(p.weights[0].cols, 7);
    EXPECT_EQ(p.weights[2].rows, 3);
    for (int l = 0; l < 3; ++l) {
        const double limit = std::sqrt(6.0 / double(spec.dims[l] + spec.dims[l + 1]));
        double maxabs = 0.0;
        for (double v : p.weights[l].data) maxabs = std::max(maxabs, std::abs(v));
        EXPECT_LE(maxabs, limit);
        EXPECT_GT(maxabs, 0.3 * limit);  // not degenerate
        for (double v : p.biases[l].data) EXPECT_DOUBLE_EQ(v, 0.0);
    }
}

TEST(Mlp, TapeForwardAgreesWithPlainEval) {
    Rng rng(62);
    const MlpSpec spec = MlpSpec::four_layer(5, 16, 4);
    const MlpParams p = mlp_init(spec, rng);
    const RealMatrix x = gaussian_matrix(rng, 5, 9);
    Tape t;
    const MlpVars vars = mlp_vars(t, p);
    const Var y = mlp_forward(t, vars, t.input(x), spec, nullptr);
    const RealMatrix ref = mlp_eval(p, spec, x);
    EXPECT_LT(frobenius_norm(sub(t.rval(y), ref)), 1e-13);
}

TEST(Mlp, GradientsMatchFiniteDifferencesBothActivations) {
    for (const Activation act : {Activation::tanh_fn, Activation::relu_fn}) {
        Rng rng(63);
        MlpSpec spec = MlpSpec::four_layer(3, 6, 2, act, 0.0);
        const MlpParams p = mlp_init(spec, rng);
        const RealMatrix x = gaussian_matrix(rng, 3, 7);
        const RealMatrix target = gaussian_matrix(rng, 2, 7);

        const auto run = [&](const MlpParams& pv, Tape* tape_out, MlpVars* vars_out) -> double {
            Tape local;
            Tape& t = tape_out ? *tape_out : local;
            MlpVars vars = mlp_vars(t, pv);
            Var y = mlp_forward(t, vars, t.input(x), spec, nullptr);
            Var loss = t.scale(t.sse_against(y, target), 1.0 / 7.0);
            if (vars_out) *vars_out = vars;
            t.backward(loss);
            return t.rval(loss)(0, 0);
        };

        Tape tape;
        MlpVars vars;
        run(p, &tape, &vars);
        for (int l = 0; l < spec.layers(); ++l) {
            const RealMatrix fd_w = testutil::fd_gradient(p.weights[l], [&](const RealMatrix& m) {
                MlpParams q = p;
                q.weights[l] = m;
                return run(q, nullptr, nullptr);
            });
            const RealMatrix fd_b = testutil::fd_gradient(p.biases[l], [&](const RealMatrix& m) {
                MlpParams q = p;
                q.biases[l] = m;
                return run(q, nullptr, nullptr);
            });
            EXPECT_LT(testutil::rel_diff(tape.rgrad(vars.weights[l]), fd_w), 1e-6)
                << "layer " << l;
            EXPECT_LT(testutil::rel_diff(tape.rgrad(vars.biases[l]), fd_b), 1e-6)
                << "layer " << l;
        }
    }
}

TEST(Mlp, DropoutMasksScaleAndVanishAtEval) {
    Rng rng(64);
    const MlpSpec spec = MlpSpec::four_layer(4, 64, 3, Activation::tanh_fn, 0.25);
    const MlpParams p = mlp_init(spec, rng);
    const RealMatrix x = gaussian_matrix(rng, 4, 40);

    // training mode: two different mask streams give different outputs,
    // identical streams give identical outputs
    Tape t1, t2, t3;
    Rng d1(100), d2(100), d3(101);
    const RealMatrix y1 = t1.rval(mlp_forward(t1, mlp_vars(t1, p), t1.input(x), spec, &d1));
    const RealMatrix y2 = t2.rval(mlp_forward(t2, mlp_vars(t2, p), t2.input(x), spec, &d2));
    const RealMatrix y3 = t3.rval(mlp_forward(t3, mlp_vars(t3, p), t3.input(x), spec, &d3));
    EXPECT_LT(frobenius_norm(sub(y1, y2)), 1e-14);
    EXPECT_GT(frobenius_norm(sub(y1, y3)), 1e-8);

    // eval mode is deterministic and mask-free
    Tape te;
    const RealMatrix ye = te.rval(mlp_forward(te, mlp_vars(te, p), te.input(x), spec, nullptr));
    EXPECT_LT(frobenius_norm(sub(ye, mlp_eval(p, spec, x))), 1e-13);

    // the inverted mask drops about `dropout` of entries and rescales the rest
    Rng dm(7);
    Tape tm;
    MlpVars vars = mlp_vars(tm, p);
    Var h = tm.tanh_op(tm.add_col(tm.matmul(vars.weights[0], tm.input(x)), vars.biases[0]));
    RealMatrix mask(64, 40);
    const double keep = 1.0 - spec.dropout;
    int zeros = 0;
    for (double& m : mask.data) {
        m = (dm.uniform01() >= spec.dropout) ? 1.0 / keep : 0.0;
        if (m == 0.0) ++zeros;
    }
    const double frac = double(zeros) / double(mask.data.size());
    EXPECT_NEAR(frac, spec.dropout, 0.03);
}

TEST(Mlp, AdamSingleStepMatchesHandComputation) {
    RealMatrix p(1, 2);
    p(0, 0) = 1.0;
    p(0, 1) = -2.0;
    RealMatrix g(1, 2);
    g(0, 0) = 0.5;
    g(0, 1) = -1.5;
    AdamState adam;
    adam.lr = 0.01;
    adam.step({&p}, {g});
    // after one step: mhat = g, vhat = g^2, update = -lr * g / (|g| + eps)
    EXPECT_NEAR(p(0, 0), 1.0 - 0.01 * (0.5 / (0.5 + 1e-8)), 1e-12);
    EXPECT_NEAR(p(0, 1), -2.0 - 0.01 * (-1.5 / (1.5 + 1e-8)), 1e-12);
}

TEST(Mlp, AdamDrivesLinearRegressionToZeroLoss) {
    Rng rng(65);
    const RealMatrix x = gaussian_matrix(rng, 3, 30);
    const RealMatrix w_true = gaussian_matrix(rng, 2, 3);
    const RealMatrix y = matmul(w_true, x);
    RealMatrix w(2, 3);
    AdamState adam;
    adam.lr = 0.05;
    double loss = 0.0;
    for (int it = 0; it < 400; ++it) {
        Tape t;
        Var vw = t.input(w);
        Var l = t.scale(t.sse_against(t.matmul(vw, t.input(x)), y), 1.0 / 30.0);
        t.backward(l);
        loss = t.rval(l)(0, 0);
        const RealMatrix g = t.rgrad(vw);
        adam.step({&w}, {g});
    }
    EXPECT_LT(loss, 1e-6);
}

TEST(Mlp, JsonRoundTripIsLossless) {
    Rng rng(66);
    const MlpSpec spec = MlpSpec::four_layer(5, 11, 2, Activation::relu_fn, 0.1);
    const MlpParams p = mlp_init(spec, rng);
    const nlohmann::json j = mlp_to_json(p);
    const std::string text = j.dump();
    const MlpParams q = mlp_from_json(nlohmann::json::parse(text));
    ASSERT_EQ(p.weights.size(), q.weights.size());
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        ASSERT_TRUE(p.weights[l].same_shape(q.weights[l]));
        for (std::size_t i = 0; i < p.weights[l].data.size(); ++i)
            EXPECT_EQ(p.weights[l].data[i], q.weights[l].data[i]);  // bitwise
    }
    const MlpSpec s2 = spec_from_json(nlohmann::json::parse(spec_to_json(spec).dump()));
    EXPECT_EQ(s2.dims, spec.dims);
    EXPECT_TRUE(s2.act == Activation::relu_fn);
    EXPECT_DOUBLE_EQ(s2.dropout, 0.1);
}
