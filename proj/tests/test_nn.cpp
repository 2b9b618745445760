#include <gtest/gtest.h>

#include <cmath>

#include "sdtd/nn.hpp"

using namespace sdtd;
using namespace sdtd::nn;

namespace {

TEST(Nonlinearities, SymmetryPoints) {
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_DOUBLE_EQ(tanh_phi(0.0), 0.0);
}

// phi(x) = 2*sigma(2x) - 1, the identity stated alongside the unit.
TEST(Nonlinearities, TanhSigmoidIdentity) {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-20, 20);
        EXPECT_NEAR(tanh_phi(x), 2.0 * sigmoid(2.0 * x) - 1.0, 1e-12);
    }
}

TEST(Nonlinearities, SaturationWithoutOverflow) {
    // saturates (possibly through a subnormal) instead of overflowing
    const double lo = sigmoid(-710.0);
    EXPECT_TRUE(is_finite(lo));
    EXPECT_LT(lo, 1e-300);
    EXPECT_EQ(sigmoid(710.0), 1.0);
    EXPECT_TRUE(is_finite(tanh_phi(710.0)));
}

TEST(Lstm, ZeroWeightsGiveHalfGates) {
    LstmParams<double> p(3, 4);
    LstmState<double> prev(1, 4);
    Tensor<double> x({1, 3});
    x.data = {0.7, -1.2, 3.0};
    LstmStepCache<double> cache;
    const LstmState<double> next = lstm_step(x, prev, p, &cache);
    for (int k = 0; k < 4; ++k) {
        EXPECT_DOUBLE_EQ(cache.i.data[k], 0.5);
        EXPECT_DOUBLE_EQ(cache.f.data[k], 0.5);
        EXPECT_DOUBLE_EQ(cache.o.data[k], 0.5);
        EXPECT_DOUBLE_EQ(next.c.data[k], 0.0);
        EXPECT_DOUBLE_EQ(next.h.data[k], 0.0);
    }
}

// Frozen values from an independent scalar computation of the five-equation
// block with these exact weights and inputs x = (1.0, -0.5, 0.25).
TEST(Lstm, ScalarTraceMatchesHandComputedOracle) {
    LstmParams<double> p(1, 1);
    p.w_xi.data = {0.5};
    p.w_hi.data = {-0.3};
    p.b_i.data = {0.1};
    p.w_xf.data = {-0.25};
    p.w_hf.data = {0.4};
    p.b_f.data = {0.2};
    p.w_xc.data = {0.7};
    p.w_hc.data = {-0.6};
    p.b_c.data = {0.0};
    p.w_xo.data = {0.3};
    p.w_ho.data = {0.2};
    p.b_o.data = {-0.1};

    const double xs[3] = {1.0, -0.5, 0.25};
    const double expected_h[3] = {0.2042878447934208, 0.016689002004286718,
                                  0.0545227573473205};
    const double expected_c[3] = {0.39021386657536267, 0.037277466272627624,
                                  0.11068933834015868};

    LstmState<double> state(1, 1);
    for (int t = 0; t < 3; ++t) {
        Tensor<double> x({1, 1});
        x.data = {xs[t]};
        state = lstm_step(x, state, p);
        EXPECT_NEAR(state.c.data[0], expected_c[t], 1e-12);
        EXPECT_NEAR(state.h.data[0], expected_h[t], 1e-12);
    }
}

TEST(Lstm, SaturatedForgetGateCarriesMemory) {
    LstmParams<double> p(2, 3);
    std::fill(p.b_f.data.begin(), p.b_f.data.end(), 20.0);
    LstmState<double> state(1, 3);
    state.c.data = {0.3, -0.25, 0.1};
    const Tensor<double> c0 = state.c;
    Tensor<double> x({1, 2});
    x.data = {1.0, -1.0};
    for (int t = 0; t < 10; ++t) state = lstm_step(x, state, p);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(state.c.data[k], c0.data[k], 1e-8);
}

TEST(Lstm, GateRangesHold) {
    Rng rng(9);
    LstmParams<double> p(4, 5);
    init_lstm(p, rng);
    LstmState<double> state(2, 5);
    for (int t = 0; t < 6; ++t) {
        Tensor<double> x({2, 4});
        for (double& v : x.data) v = rng.uniform(-3, 3);
        LstmStepCache<double> cache;
        state = lstm_step(x, state, p, &cache);
        for (std::size_t k = 0; k < cache.i.numel(); ++k) {
            EXPECT_GT(cache.i.data[k], 0.0);
            EXPECT_LT(cache.i.data[k], 1.0);
            EXPECT_GT(cache.f.data[k], 0.0);
            EXPECT_LT(cache.f.data[k], 1.0);
            EXPECT_GT(cache.o.data[k], 0.0);
            EXPECT_LT(cache.o.data[k], 1.0);
            EXPECT_LT(std::abs(state.h.data[k]), 1.0);
        }
    }
}

TEST(Conv, AllOnesKernelSumsInput) {
    Tensor<double> x({1, 1, 3, 3});
    x.data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    Tensor<double> w({1, 1, 3, 3}, 1.0);
    Tensor<double> b({1});
    const Tensor<double> y = conv2d_forward(x, w, b, 1, 0);
    ASSERT_EQ(y.numel(), 1u);
    EXPECT_DOUBLE_EQ(y.data[0], 45.0);
}

TEST(Softmax, UniformLogitsGiveUniformProbs) {
    Tensor<double> logits({1, 3});
    const auto [loss, grad] = softmax_cross_entropy(logits, {0});
    EXPECT_NEAR(loss, std::log(3.0), 1e-12);
    const Tensor<double> p = softmax(logits);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(p.data[k], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> logits({2, 5});
        for (double& v : logits.data) v = rng.uniform(-8, 8);
        const Tensor<double> p = softmax(logits);
        for (int n = 0; n < 2; ++n) {
            double s = 0;
            for (int k = 0; k < 5; ++k) s += p.data[n * 5 + k];
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
        Tensor<double> shifted = logits;
        for (int k = 0; k < 5; ++k) shifted.data[k] += 3.7;
        const Tensor<double> q = softmax(shifted);
        for (int k = 0; k < 5; ++k) EXPECT_NEAR(q.data[k], p.data[k], 1e-6);
    }
}

TEST(Softmax, LabelOutOfRangeRejected) {
    Tensor<double> logits({1, 3});
    EXPECT_THROW(softmax_cross_entropy(logits, {3}), DataError);
}

// ---------------------------------------------------------------------------
// per-layer finite-difference verification (eps = 1e-5, double precision)

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Scalar probe loss: sum of elementwise product with a fixed random tensor.
Tensor<double> random_like(const std::vector<int>& shape, Rng& rng) {
    Tensor<double> t(shape);
    for (double& v : t.data) v = rng.uniform(-1, 1);
    return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

TEST(GradCheckLayers, Conv2d) {
    Rng rng(21);
    Tensor<double> x = random_like({2, 3, 6, 7}, rng);
    Tensor<double> w = random_like({4, 3, 3, 3}, rng);
    Tensor<double> b = random_like({4}, rng);
    const int stride = 1, pad = 1;
    Conv2dCache<double> cache;
    Tensor<double> y = conv2d_forward(x, w, b, stride, pad, &cache);
    const Tensor<double> probe = random_like(y.shape, rng);

    Tensor<double> dw(w.shape), db(b.shape);
    const Tensor<double> dx = conv2d_backward(cache, w, probe, dw, db);

    auto loss = [&]() { return dot(conv2d_forward(x, w, b, stride, pad), probe); };
    double max_err = 0;
    for (std::size_t i = 0; i < x.numel(); i += 7) {
        const double orig = x.data[i];
        x.data[i] = orig + kEps;
        const double lp = loss();
        x.data[i] = orig - kEps;
        const double lm = loss();
        x.data[i] = orig;
        max_err = std::max(max_err, rel_err(dx.data[i], (lp - lm) / (2 * kEps)));
    }
    for (std::size_t i = 0; i < w.numel(); i += 5) {
        const double orig = w.data[i];
        w.data[i] = orig + kEps;
        const double lp = loss();
        w.data[i] = orig - kEps;
        const double lm = loss();
        w.data[i] = orig;
        max_err = std::max(max_err, rel_err(dw.data[i], (lp - lm) / (2 * kEps)));
    }
    for (std::size_t i = 0; i < b.numel(); ++i) {
        const double orig = b.data[i];
        b.data[i] = orig + kEps;
        const double lp = loss();
        b.data[i] = orig - kEps;
        const double lm = loss();
        b.data[i] = orig;
        max_err = std::max(max_err, rel_err(db.data[i], (lp - lm) / (2 * kEps)));
    }
    EXPECT_LT(max_err, kTol);
}

TEST(GradCheckLayers, MaxPoolAndRelu) {
    Rng rng(23);
    Tensor<double> x = random_like({2, 3, 6, 4}, rng);
    MaxPoolCache<double> pc;
    Tensor<double> relu_in;
    Tensor<double> h = relu_forward(x, &relu_in);
    Tensor<double> y = maxpool2x2_forward(h, &pc);
    const Tensor<double> probe = random_like(y.shape, rng);

    const Tensor<double> dh = maxpool2x2_backward(pc, probe);
    const Tensor<double> dx = relu_backward(relu_in, dh);

    auto loss = [&]() { return dot(maxpool2x2_forward(relu_forward(x)), probe); };
    double max_err = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (std::abs(x.data[i]) < 0.05) continue;  // kink of relu / pool ties
        const double orig = x.data[i];
        x.data[i] = orig + kEps;
        const double lp = loss();
        x.data[i] = orig - kEps;
        const double lm = loss();
        x.data[i] = orig;
        max_err = std::max(max_err, rel_err(dx.data[i], (lp - lm) / (2 * kEps)));
    }
    EXPECT_LT(max_err, kTol);
}

TEST(GradCheckLayers, FullyConnectedWithSoftmax) {
    Rng rng(25);
    Tensor<double> x = random_like({3, 6}, rng);
    Tensor<double> w = random_like({4, 6}, rng);
    Tensor<double> b = random_like({4}, rng);
    const std::vector<int> labels = {1, 3, 0};

    FcCache<double> cache;
    Tensor<double> logits = fc_forward(x, w, b, &cache);
    auto [l0, dlogits] = softmax_cross_entropy(logits, labels);
    Tensor<double> dw(w.shape), db(b.shape);
    const Tensor<double> dx = fc_backward(cache, w, dlogits, dw, db);

    auto loss = [&]() {
        return softmax_cross_entropy(fc_forward(x, w, b), labels).first;
    };
    double max_err = 0;
    auto check = [&](Tensor<double>& t, const Tensor<double>& grad) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data[i];
            t.data[i] = orig + kEps;
            const double lp = loss();
            t.data[i] = orig - kEps;
            const double lm = loss();
            t.data[i] = orig;
            max_err = std::max(max_err, rel_err(grad.data[i], (lp - lm) / (2 * kEps)));
        }
    };
    check(x, dx);
    check(w, dw);
    check(b, db);
    EXPECT_LT(max_err, kTol);
}

TEST(GradCheckLayers, LstmStepBackward) {
    Rng rng(27);
    LstmParams<double> p(3, 4);
    init_lstm(p, rng);
    Tensor<double> x = random_like({2, 3}, rng);
    LstmState<double> prev(2, 4);
    for (double& v : prev.h.data) v = rng.uniform(-0.5, 0.5);
    for (double& v : prev.c.data) v = rng.uniform(-0.5, 0.5);

    LstmStepCache<double> cache;
    LstmState<double> next = lstm_step(x, prev, p, &cache);
    const Tensor<double> probe_h = random_like(next.h.shape, rng);
    const Tensor<double> probe_c = random_like(next.c.shape, rng);

    LstmGrads<double> grads(p);
    Tensor<double> dx, dh_prev, dc_prev;
    lstm_step_backward(cache, p, probe_h, probe_c, grads, dx, dh_prev, dc_prev);

    auto loss = [&]() {
        const LstmState<double> s = lstm_step(x, prev, p);
        return dot(s.h, probe_h) + dot(s.c, probe_c);
    };
    double max_err = 0;
    auto check = [&](Tensor<double>& t, const Tensor<double>& grad) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data[i];
            t.data[i] = orig + kEps;
            const double lp = loss();
            t.data[i] = orig - kEps;
            const double lm = loss();
            t.data[i] = orig;
            max_err = std::max(max_err, rel_err(grad.data[i], (lp - lm) / (2 * kEps)));
        }
    };
    check(x, dx);
    check(prev.h.data.size() ? prev.h : prev.h, dh_prev);
    check(prev.c, dc_prev);
    check(p.w_xi, grads.w_xi);
    check(p.w_hf, grads.w_hf);
    check(p.w_xc, grads.w_xc);
    check(p.w_ho, grads.w_ho);
    check(p.b_i, grads.b_i);
    check(p.b_f, grads.b_f);
    EXPECT_LT(max_err, kTol);
}

// ---------------------------------------------------------------------------
// SGD with momentum

TEST(Sgd, SingleStepHeavyBall) {
    Tensor<double> theta({1}), grad({1});
    theta.data = {1.0};
    grad.data = {1.0};
    std::vector<NamedParam<double>> params = {{"theta", &theta, &grad}};
    SgdState<double> state;
    state.learning_rate = 0.1;
    state.momentum = 0.9;
    sgd_momentum_update(params, state);
    EXPECT_NEAR(state.velocity[0].data[0], -0.1, 1e-15);
    EXPECT_NEAR(theta.data[0], 0.9, 1e-15);

    sgd_momentum_update(params, state);  // same gradient again
    EXPECT_NEAR(state.velocity[0].data[0], -0.19, 1e-15);
    EXPECT_NEAR(theta.data[0], 1.0 - 0.29, 1e-15);
}

TEST(Sgd, ZeroMomentumIsPlainSgd) {
    Tensor<double> a({1}), ga({1}), b({1}), gb({1});
    a.data = {2.0};
    b.data = {2.0};
    std::vector<NamedParam<double>> pa = {{"a", &a, &ga}};
    std::vector<NamedParam<double>> pb = {{"b", &b, &gb}};
    SgdState<double> sa;
    sa.learning_rate = 0.05;
    sa.momentum = 0.0;
    for (int i = 0; i < 10; ++i) {
        ga.data[0] = 2.0 * a.data[0];
        sgd_momentum_update(pa, sa);
        gb.data[0] = 2.0 * b.data[0];
        b.data[0] -= 0.05 * gb.data[0];
    }
    EXPECT_NEAR(a.data[0], b.data[0], 1e-12);
}

TEST(Sgd, NonfiniteGradientNamesTensor) {
    Tensor<double> theta({2}), grad({2});
    grad.data = {0.0, std::numeric_limits<double>::quiet_NaN()};
    std::vector<NamedParam<double>> params = {{"conv1.weight", &theta, &grad}};
    SgdState<double> state;
    try {
        sgd_momentum_update(params, state);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("conv1.weight"), std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// grad_check harness

// Minimal linear least-squares model: loss = 0.5 ||W x - t||^2.
struct LinearModel {
    Tensor<double> w{{2, 3}};
    Tensor<double> grad_w{{2, 3}};
    Tensor<double> x{{3}};
    Tensor<double> target{{2}};
    bool negate = false;

    std::vector<NamedParam<double>> params() { return {{"w", &w, &grad_w}}; }

    double loss(int) const {
        double l = 0;
        for (int o = 0; o < 2; ++o) {
            double y = 0;
            for (int k = 0; k < 3; ++k) y += w.data[o * 3 + k] * x.data[k];
            l += 0.5 * (y - target.data[o]) * (y - target.data[o]);
        }
        return l;
    }

    double loss_and_gradients(int b) {
        grad_w.zero();
        for (int o = 0; o < 2; ++o) {
            double y = 0;
            for (int k = 0; k < 3; ++k) y += w.data[o * 3 + k] * x.data[k];
            for (int k = 0; k < 3; ++k)
                grad_w.data[o * 3 + k] += (y - target.data[o]) * x.data[k];
        }
        if (negate)
            for (double& v : grad_w.data) v = -v;
        return loss(b);
    }
};

TEST(GradCheckHarness, ExactForQuadratics) {
    LinearModel m;
    Rng rng(31);
    for (double& v : m.w.data) v = rng.uniform(-1, 1);
    for (double& v : m.x.data) v = rng.uniform(-1, 1);
    for (double& v : m.target.data) v = rng.uniform(-1, 1);
    EXPECT_LT(grad_check(m, 0, 1e-5, 7), 1e-9);
}

TEST(GradCheckHarness, DetectsBrokenBackward) {
    LinearModel m;
    Rng rng(33);
    for (double& v : m.w.data) v = rng.uniform(-1, 1);
    for (double& v : m.x.data) v = rng.uniform(0.2, 1);
    for (double& v : m.target.data) v = rng.uniform(-1, -0.2);
    m.negate = true;
    EXPECT_GT(grad_check(m, 0, 1e-5, 7), 0.1);
}

}  // namespace
