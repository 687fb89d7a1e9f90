#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "bcglm/nn/adam.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/nn/layers.hpp"
#include "bcglm/nn/network.hpp"
#include "bcglm/nn/serialize.hpp"
#include "bcglm/nn/train.hpp"
#include "bcglm/rng.hpp"
#include "test_util.hpp"

using namespace bcglm;
using namespace bcglm::nn;

namespace {

Tensor image3x3() { return Tensor({3, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}); }

// Direct evaluation of the valid-mode convolution sum, written independently
// of the library loops: out[m][r][c] = b[c] + sum_{i,j,k} K[c][i][j][k] x[m*s+i][r*s+j][k].
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t sh, std::size_t sw) {
    const std::size_t H = x.extent(0), W = x.extent(1), C = x.extent(2);
    const std::size_t F = k.extent(0), kh = k.extent(1), kw = k.extent(2);
    const std::size_t oh = (H - kh) / sh + 1, ow = (W - kw) / sw + 1;
    Tensor out({oh, ow, F});
    for (std::size_t m = 0; m < oh; ++m)
        for (std::size_t r = 0; r < ow; ++r)
            for (std::size_t f = 0; f < F; ++f) {
                double s = b[f];
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j)
                        for (std::size_t c = 0; c < C; ++c)
                            s += k[((f * kh + i) * kw + j) * C + c] * x(m * sh + i, r * sw + j, c);
                out(m, r, f) = s;
            }
    return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

} // namespace

TEST(Conv2d, HandExample) {
    const Tensor k({1, 2, 2, 1}, std::vector<double>{1, 0, 0, 1});
    const Tensor out = conv2d_forward(image3x3(), k, Tensor::vector({0.0}), 1, 1, Activation::Linear);
    EXPECT_EQ(out.shape(), (Shape{2, 2, 1}));
    EXPECT_EQ(out.values(), (std::vector<double>{6, 8, 12, 14}));
}

TEST(Conv2d, ZeroAndIdentityKernels) {
    SeededRng rng(3);
    const Tensor x = draw_normal(rng, {5, 4, 1});
    const Tensor zero = conv2d_forward(x, Tensor({1, 2, 2, 1}), Tensor({1}), 1, 1, Activation::Linear);
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);
    const Tensor same = conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), 1, 1, Activation::Linear);
    EXPECT_EQ(same.values(), x.values());
}

TEST(Conv2d, StridesAndErrors) {
    SeededRng rng(4);
    const Tensor x = draw_normal(rng, {7, 6, 2});
    const Tensor k = draw_normal(rng, {3, 3, 2, 2});
    const Tensor b = draw_normal(rng, {3});
    const Tensor out = conv2d_forward(x, k, b, 2, 3, Activation::Linear);
    EXPECT_EQ(out.shape(), (Shape{3, 2, 3}));
    EXPECT_LE(max_abs_diff(out.data(), naive_conv(x, k, b, 2, 3).data()), 1e-13);
    EXPECT_THROW(conv2d_forward(x, Tensor({1, 8, 1, 2}), Tensor({1}), 1, 1, Activation::Linear), Error);
    EXPECT_THROW(conv2d_forward(x, Tensor({1, 2, 2, 3}), Tensor({1}), 1, 1, Activation::Linear), Error);
}

TEST(Conv2d, SoftmaxAcrossChannels) {
    SeededRng rng(5);
    const Tensor x = draw_normal(rng, {4, 4, 1});
    const Tensor k = draw_normal(rng, {3, 2, 2, 1});
    const Tensor out = conv2d_forward(x, k, Tensor({3}), 1, 1, Activation::Softmax);
    for (std::size_t p = 0; p < 9; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += out[p * 3 + c];
        EXPECT_NEAR(s, 1.0, 1e-14);
    }
}

TEST(ConvAsAffine, HandExample) {
    const Tensor k({1, 2, 2, 1}, std::vector<double>{1, 0, 0, 1});
    const AffineConv a = conv_as_affine(image3x3(), k, Tensor::vector({0.0}));
    EXPECT_EQ(a.patches.shape(), (Shape{4, 4}));
    EXPECT_EQ(a.output.values(), (std::vector<double>{6, 8, 12, 14}));
}

TEST(ConvAsAffine, DegenerateShape) {
    const AffineConv a = conv_as_affine(Tensor({1, 1, 1}, 2.5), Tensor({1, 1, 1, 1}, 3.0), Tensor::vector({0.0}));
    EXPECT_EQ(a.patches.shape(), (Shape{1, 1}));
    EXPECT_EQ(a.patches[0], 2.5);
    EXPECT_EQ(a.output[0], 7.5);
}

TEST(ConvAsAffine, EightByEightTwoChannels) {
    SeededRng rng(6);
    const Tensor x = draw_normal(rng, {8, 8, 2});
    const Tensor k = draw_normal(rng, {3, 3, 3, 2});
    const Tensor b = draw_normal(rng, {3});
    const Tensor direct = conv2d_forward(x, k, b, 1, 1, Activation::Linear);
    EXPECT_LE(max_abs_diff(direct.data(), conv_as_affine(x, k, b).output.data()), 1e-12);
}

TEST(ConvAsAffine, AgreesWithDirectOnRandomShapes) {
    SeededRng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t H = 1 + rng.uniform_index(12), W = 1 + rng.uniform_index(12), C = 1 + rng.uniform_index(3);
        const std::size_t kh = 1 + rng.uniform_index(H), kw = 1 + rng.uniform_index(W), F = 1 + rng.uniform_index(4);
        const std::size_t sh = 1 + rng.uniform_index(3), sw = 1 + rng.uniform_index(3);
        const Tensor x = draw_normal(rng, {H, W, C});
        const Tensor k = draw_normal(rng, {F, kh, kw, C});
        const Tensor b = draw_normal(rng, {F});
        const Tensor direct = conv2d_forward(x, k, b, sh, sw, Activation::Linear);
        const AffineConv a = conv_as_affine(x, k, b, sh, sw);
        ASSERT_EQ(direct.shape(), a.output.shape()) << "trial " << trial;
        EXPECT_LE(max_abs_diff(direct.data(), a.output.data()), 1e-12) << "trial " << trial;
    }
}

TEST(MaxPool, Examples) {
    const PoolResult p = maxpool_forward(Tensor::matrix({{1, 2}, {3, 4}}), 2, 2);
    EXPECT_EQ(p.output.values(), (std::vector<double>{4}));
    EXPECT_EQ(p.argmax, (std::vector<std::size_t>{3}));
    const PoolResult c = maxpool_forward(Tensor({4, 4, 2}, 1.25), 2, 2);
    for (double v : c.output.data()) EXPECT_EQ(v, 1.25);
    const Tensor in = Tensor::matrix({{1, 2, 5}, {3, 4, 6}});
    EXPECT_EQ(maxpool_forward(in, 1, 1).output, in);
    EXPECT_THROW(maxpool_forward(in, 0, 1), Error);
}

TEST(MaxPool, FloorsRemainders) {
    const PoolResult p = maxpool_forward(Tensor::matrix({{1, 2, 9}, {3, 4, 9}, {9, 9, 9}}), 2, 2);
    EXPECT_EQ(p.output.shape(), (Shape{1, 1}));
    EXPECT_EQ(p.output[0], 4.0);
}

TEST(Dense, Examples) {
    const Tensor x = Tensor::vector({3, 4});
    EXPECT_EQ(dense_forward(x, Tensor::identity(2), Tensor({2}), Activation::Linear).values(), x.values());
    EXPECT_EQ(dense_forward(x, Tensor({2, 2}), Tensor::vector({1, 2}), Activation::Linear).values(),
              (std::vector<double>{1, 2}));
    const Tensor t = dense_forward(x, Tensor::matrix({{1, 1}}), Tensor::vector({0}), Activation::TanH);
    EXPECT_NEAR(t[0], 0.999998, 1e-6);
    EXPECT_DOUBLE_EQ(t[0], std::tanh(7.0));
    EXPECT_THROW(dense_forward(x, Tensor({2, 3}), Tensor({2}), Activation::Linear), Error);
}

TEST(Dropout, Examples) {
    const Tensor x = Tensor::vector({2, 2});
    EXPECT_EQ(apply_dropout(x, Tensor({2}, 1.0), 0.0).values(), x.values());
    EXPECT_EQ(apply_dropout(x, Tensor({2}, 0.0), 0.3).values(), (std::vector<double>{0, 0}));
    EXPECT_EQ(apply_dropout(x, Tensor::vector({1, 0}), 0.5).values(), (std::vector<double>{4, 0}));
    try {
        apply_dropout(x, Tensor({2}, 1.0), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidRate);
    }
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
    const Tensor x = Tensor::vector({1.0, -2.0, 0.5, 3.0});
    const double rate = 0.3;
    SeededRng rng(12);
    std::vector<double> mean(4, 0.0);
    const int draws = 100000;
    for (int d = 0; d < draws; ++d) {
        const Tensor m = draw_bernoulli(rng, {4}, 1.0 - rate);
        const Tensor y = apply_dropout(x, m, rate);
        for (std::size_t i = 0; i < 4; ++i) mean[i] += y[i] / draws;
    }
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(mean[i], x[i], 0.01 * std::fabs(x[i]));
}

TEST(Loss, Examples) {
    const std::vector<double> y{1.0, 2.0}, yhat{1.0, 2.0};
    EXPECT_EQ(loss_eval(LossKind::MSE, y, yhat), 0.0);
    EXPECT_NEAR(loss_eval(LossKind::BCE, std::vector<double>{1.0}, std::vector<double>{0.5}), std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(loss_eval(LossKind::Poisson, std::vector<double>{0.0}, std::vector<double>{1.0}), 1.0);
    EXPECT_THROW(loss_eval(LossKind::BCE, std::vector<double>{1.0}, std::vector<double>{1.0}), Error);
    EXPECT_THROW(loss_eval(LossKind::Poisson, std::vector<double>{1.0}, std::vector<double>{-0.1}), Error);
    EXPECT_THROW(loss_eval(LossKind::MSE, std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), Error);
}

TEST(Loss, MseGradientIsTwiceResidualOverN) {
    const std::vector<double> y{1.0, -1.0, 0.5}, yhat{0.0, 2.0, 0.5};
    const auto g = loss_gradient(LossKind::MSE, y, yhat);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * (yhat[i] - y[i]) / 3.0);
}

// ---------------------------------------------------------------------------
// Configuration parsing
// ---------------------------------------------------------------------------

TEST(Config, ParseAndRoundTrip) {
    const std::string text = R"(# gaussian image model
input 30x30x1
covariates 2
loss mse
optimizer adam learning_rate=1e-4
batch_size 16
epochs 7
conv2d filters=8 kernel=4x4 strides=2x2 activation=relu
dropout rate=0.2
maxpool pool=2x2
flatten
dense units=16 activation=softplus
dropout rate=0.2
concatenate
dense units=1 activation=linear
)";
    const NetworkConfig cfg = parse_config(text);
    EXPECT_EQ(cfg.layers.size(), 8u);
    EXPECT_EQ(cfg.adam.learning_rate, 1e-4);
    const NetworkLayout layout = infer_layout(cfg);
    EXPECT_EQ(layout.shapes[1].height, 14u);
    EXPECT_EQ(layout.shapes[3].height, 7u);
    EXPECT_EQ(layout.feature_dim(), 16u);
    EXPECT_EQ(layout.output_dim, 1u);
    const NetworkConfig again = parse_config(config_to_string(cfg));
    EXPECT_EQ(config_to_string(again), config_to_string(cfg));
}

TEST(Config, RejectsBadStacks) {
    auto rejects = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const Error&) {
            return true;
        }
        return false;
    };
    EXPECT_TRUE(rejects("input 4\ndense units=2 activation=relu\nconcatenate\nconcatenate\ndense units=1\n"));
    EXPECT_TRUE(rejects("input 4\ndropout rate=1\ndense units=1\n"));
    EXPECT_TRUE(rejects("input 4x4x1\ndense units=1\n"));
    EXPECT_TRUE(rejects("input 4x4x1\nconv2d filters=1 kernel=5x5\nflatten\ndense units=1\n"));
    EXPECT_TRUE(rejects("input 4\ndense units=0\n"));
    EXPECT_TRUE(rejects("input 4\ndense units=1 colour=red\n"));
    EXPECT_TRUE(rejects("input 4\ndense 3\n"));
    EXPECT_TRUE(rejects("input 4\ncovariates 2\ndense units=1\n"));
    EXPECT_TRUE(rejects("input 4\nflatten\n"));
    EXPECT_FALSE(rejects("input 12x2\nconv1d filters=3 kernel=3 strides=2 activation=tanh\nflatten\ndense units=1\n"));
}

// ---------------------------------------------------------------------------
// Gradients against central finite differences
// ---------------------------------------------------------------------------

namespace {

struct GradCase {
    std::string config;
    std::size_t n = 4;
};

Tensor responses(LossKind loss, std::size_t n, std::size_t d, SeededRng& rng) {
    Tensor y({n, d});
    for (double& v : y.data()) {
        if (loss == LossKind::MSE) v = rng.normal();
        else if (loss == LossKind::BCE) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        else v = static_cast<double>(rng.poisson(1.5));
    }
    return y;
}

// Checks every parameter tensor; at most `per_tensor` entries each, spread evenly.
void check_gradients(const std::string& text, std::size_t n, std::uint64_t seed, double min_abs_pre = 0.0) {
    const NetworkConfig cfg = parse_config(text);
    Network net(cfg);
    SeededRng rng(seed);
    SeededRng init = rng.substream("init");
    net.initialize(init);
    for (auto& p : net.params())
        for (double& b : p.bias.data()) b = 0.1 * rng.normal();
    Shape xs{n};
    xs.insert(xs.end(), cfg.input_shape.begin(), cfg.input_shape.end());
    const Tensor X = draw_normal(rng, xs);
    const Tensor Z = cfg.covariates ? draw_normal(rng, {n, cfg.covariates}) : Tensor();
    const Tensor Y = responses(cfg.loss, n, net.output_dim(), rng);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const SeededRng masks = rng.substream("masks");

    if (min_abs_pre > 0.0) {
        ForwardCache c;
        SeededRng m = masks;
        double smallest = 1e300;
        for (std::size_t r = 0; r < n; ++r) {
            net.forward(X.data().data() + r * net.input_size(), cfg.covariates ? Z.data().data() + r * cfg.covariates : nullptr,
                        DropoutMode::Sample, m, c);
            for (std::size_t l = 0; l < cfg.layers.size(); ++l)
                if (cfg.layers[l].activation == Activation::ReLU && cfg.layers[l].has_parameters())
                    for (double v : c.pre[l]) smallest = std::min(smallest, std::fabs(v));
        }
        ASSERT_GT(smallest, min_abs_pre) << "seed does not keep ReLU inputs away from the kink";
    }

    SeededRng m0 = masks;
    const BatchResult analytic = batch_gradient(net, X, Z, Y, rows, DropoutMode::Sample, m0);
    const double h = 1e-6;
    std::size_t checked = 0;
    for (std::size_t l = 0; l < net.params().size(); ++l) {
        for (int which = 0; which < 2; ++which) {
            Tensor& p = which == 0 ? net.params()[l].weight : net.params()[l].bias;
            if (p.empty()) continue;
            const Tensor& g = which == 0 ? analytic.grads[l].weight : analytic.grads[l].bias;
            const std::size_t budget = which == 0 ? 50 : 10;
            const std::size_t step = std::max<std::size_t>(1, p.size() / budget);
            for (std::size_t i = 0; i < p.size(); i += step) {
                const double orig = p[i];
                p[i] = orig + h;
                SeededRng mp = masks;
                const double up = batch_gradient(net, X, Z, Y, rows, DropoutMode::Sample, mp).loss;
                p[i] = orig - h;
                SeededRng mm = masks;
                const double down = batch_gradient(net, X, Z, Y, rows, DropoutMode::Sample, mm).loss;
                p[i] = orig;
                const double numeric = (up - down) / (2.0 * h);
                EXPECT_LT(test_util::rel_error(g[i], numeric, 1e-4), 1e-5)
                    << "layer " << l << (which ? " bias " : " weight ") << i << ": analytic " << g[i] << " numeric " << numeric;
                ++checked;
            }
        }
    }
    EXPECT_GE(checked, 50u);
}

} // namespace

TEST(Gradients, DenseTanhSoftplusMse) {
    check_gradients("input 5\nloss mse\ndense units=6 activation=tanh\ndropout rate=0.3\ndense units=4 activation=softplus\n"
                    "dense units=2 activation=linear\n",
                    6, 1);
}

TEST(Gradients, DenseSigmoidBce) {
    check_gradients("input 4\nloss bce\ndense units=12 activation=tanh\ndropout rate=0.2\ndense units=1 activation=sigmoid\n", 8, 2);
}

TEST(Gradients, DenseExponentialPoisson) {
    check_gradients("input 4\nloss poisson\ndense units=12 activation=softplus\ndense units=1 activation=exponential\n", 8, 3);
}

TEST(Gradients, NonFusedOutputs) {
    // Losses paired with output activations whose derivative is not simplified.
    check_gradients("input 3\nloss bce\ndense units=14 activation=tanh\ndense units=2 activation=softmax\n", 6, 4);
    check_gradients("input 3\nloss poisson\ndense units=14 activation=tanh\ndense units=1 activation=softplus\n", 6, 5);
    check_gradients("input 3\nloss mse\ndense units=14 activation=sigmoid\ndense units=1 activation=exponential\n", 6, 6);
}

TEST(Gradients, Conv2dPoolDropoutConcat) {
    check_gradients("input 9x8x2\ncovariates 2\nloss mse\nconv2d filters=3 kernel=3x2 strides=2x1 activation=tanh\n"
                    "dropout rate=0.25\nmaxpool pool=2x2\nflatten\ndense units=5 activation=softplus\ndropout rate=0.1\n"
                    "concatenate\ndense units=1 activation=linear\n",
                    4, 7);
}

TEST(Gradients, Conv2dSoftmaxChannels) {
    check_gradients("input 6x6x1\nloss bce\nconv2d filters=3 kernel=2x2 activation=softmax\nconv2d filters=2 kernel=2x2 "
                    "strides=2x2 activation=sigmoid\nflatten\ndense units=1 activation=sigmoid\n",
                    4, 8);
}

TEST(Gradients, Conv1dPoisson) {
    check_gradients("input 20x2\ncovariates 1\nloss poisson\nconv1d filters=4 kernel=5 strides=2 activation=tanh\n"
                    "dropout rate=0.2\nmaxpool pool=2x1\nflatten\ndense units=6 activation=tanh\nconcatenate\n"
                    "dense units=1 activation=exponential\n",
                    5, 9);
}

TEST(Gradients, ReluAwayFromKink) {
    check_gradients("input 6\nloss mse\ndense units=10 activation=relu\ndense units=1 activation=linear\n", 3, 10, 1e-3);
}

TEST(Gradients, FullyMaskedPathHasZeroGradient) {
    // With every mask zero after the first dense layer its weights never reach the loss.
    NetworkConfig cfg = parse_config("input 3\nloss mse\ndense units=4 activation=tanh\ndropout rate=0.5\ndense units=1\n");
    Network net(cfg);
    SeededRng init(1);
    net.initialize(init);
    ForwardCache c;
    SeededRng unused(2);
    const std::vector<double> x{0.3, -0.2, 1.0};
    net.forward(x.data(), nullptr, DropoutMode::Off, unused, c);
    std::fill(c.mask[1].begin(), c.mask[1].end(), 0.0);
    auto grads = net.zero_grads();
    net.backward(c, {1.0}, false, grads);
    for (double g : grads[0].weight.data()) EXPECT_EQ(g, 0.0);
    for (double g : grads[0].bias.data()) EXPECT_EQ(g, 0.0);
    EXPECT_EQ(grads[2].bias[0], 1.0);
}

// ---------------------------------------------------------------------------
// Optimizer and training
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParameters) {
    std::vector<double> q{1.0, -3.0}, z{0.0, 0.0}, m0{0.0, 0.0}, v0{0.0, 0.0};
    for (std::size_t t = 1; t <= 5; ++t) adam_step(q, z, m0, v0, t, AdamHyper{});
    EXPECT_EQ(q, (std::vector<double>{1.0, -3.0}));
    EXPECT_EQ(m0, (std::vector<double>{0.0, 0.0}));

    std::vector<double> p{1.0}, g{0.0}, m{0.5}, v{0.1};
    adam_step(p, g, m, v, 3, AdamHyper{});
    EXPECT_NEAR(m[0], 0.45, 1e-15);
    EXPECT_NEAR(v[0], 0.0999, 1e-15);
}

TEST(Adam, FirstStepClosedForm) {
    std::vector<double> p{0.0}, g{1.0}, m{0.0}, v{0.0};
    adam_step(p, g, m, v, 1, AdamHyper{1e-3, 0.9, 0.999, 1e-8});
    // m_hat = v_hat = 1, so the step is lr / (1 + eps).
    EXPECT_NEAR(p[0], -1e-3 / (1.0 + 1e-8), 1e-18);
    EXPECT_NEAR(p[0], -1e-3, 1e-10);
    EXPECT_THROW(adam_step(p, g, m, v, 0, AdamHyper{}), Error);
}

namespace {

struct Toy {
    Tensor X, Z, Y;
};

// Two Gaussian blobs split by the line x1 + x2 = 0 with a margin.
Toy separable_toy(std::size_t n, std::uint64_t seed) {
    SeededRng rng(seed);
    Toy t{Tensor({n, 2}), Tensor(), Tensor({n, 1})};
    for (std::size_t i = 0; i < n; ++i) {
        const double label = i % 2 == 0 ? 1.0 : 0.0;
        const double shift = label == 1.0 ? 1.5 : -1.5;
        t.X(i, 0) = shift + 0.5 * rng.normal();
        t.X(i, 1) = shift + 0.5 * rng.normal();
        t.Y[i] = label;
    }
    return t;
}

const char* kToyConfig = "input 2\nloss bce\noptimizer adam learning_rate=0.01\nbatch_size 20\nepochs 60\npatience 0\n"
                         "dense units=8 activation=tanh\ndropout rate=0.1\ndense units=1 activation=sigmoid\n";

} // namespace

TEST(Train, ZeroEpochsReturnsInitialization) {
    NetworkConfig cfg = parse_config(kToyConfig);
    cfg.epochs = 0;
    const Toy toy = separable_toy(50, 1);
    const TrainedNetwork t = train(cfg, toy.X, toy.Z, toy.Y, SeededRng(3));
    Network ref(cfg);
    SeededRng init = SeededRng(3).substream("init");
    ref.initialize(init);
    EXPECT_TRUE(t.log.empty());
    for (std::size_t l = 0; l < ref.params().size(); ++l) EXPECT_EQ(t.network.params()[l].weight, ref.params()[l].weight);
}

TEST(Train, SeparableToyReachesHighAccuracy) {
    const NetworkConfig cfg = parse_config(kToyConfig);
    const Toy toy = separable_toy(200, 2);
    const TrainedNetwork t = train(cfg, toy.X, toy.Z, toy.Y, SeededRng(5));
    SeededRng unused(0);
    const Prediction p = predict(t.network, toy.X, toy.Z, DropoutMode::Off, unused);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 200; ++i) correct += (p.output[i] > 0.5) == (toy.Y[i] == 1.0);
    EXPECT_GE(correct / 200.0, 0.95);
    ASSERT_GE(t.log.size(), 50u);
    EXPECT_LT(t.log[49].train_loss, t.log[0].train_loss);
}

TEST(Train, DeterministicPerSeed) {
    const NetworkConfig cfg = parse_config(kToyConfig);
    const Toy toy = separable_toy(80, 3);
    const TrainedNetwork a = train(cfg, toy.X, toy.Z, toy.Y, SeededRng(9));
    const TrainedNetwork b = train(cfg, toy.X, toy.Z, toy.Y, SeededRng(9));
    const TrainedNetwork c = train(cfg, toy.X, toy.Z, toy.Y, SeededRng(10));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    for (std::size_t l = 0; l < a.network.params().size(); ++l) {
        EXPECT_EQ(a.network.params()[l].weight, b.network.params()[l].weight);
        EXPECT_EQ(a.network.params()[l].bias, b.network.params()[l].bias);
    }
    EXPECT_FALSE(a.network.params()[0].weight == c.network.params()[0].weight);
}

TEST(Train, EarlyStoppingRestoresBestEpoch) {
    NetworkConfig cfg = parse_config(kToyConfig);
    cfg.epochs = 400;
    cfg.patience = 5;
    cfg.validation_fraction = 0.2;
    Toy toy = separable_toy(100, 4);
    SeededRng labels(44);
    for (double& y : toy.Y.data()) y = labels.bernoulli(0.5) ? 1.0 : 0.0; // pure noise, so validation loss stalls
    const TrainedNetwork t = train(cfg, toy.X, toy.Z, toy.Y, SeededRng(6));
    ASSERT_FALSE(t.log.empty());
    EXPECT_LT(t.log.size(), 400u);
    double best = 1e300;
    std::size_t best_epoch = 0;
    for (const auto& r : t.log)
        if (r.validation_loss < best) best = r.validation_loss, best_epoch = r.epoch;
    EXPECT_EQ(t.best_epoch, best_epoch);
    EXPECT_EQ(t.log.size(), best_epoch + 5);
}

TEST(Train, NonFiniteLossIsReported) {
    // Squared residuals of order 1e400 overflow on the first batch.
    NetworkConfig cfg = parse_config("input 1\nloss mse\nepochs 5\nvalidation_fraction 0\ndense units=1 activation=linear\n");
    const Tensor X({20, 1}, 1e200), Y({20, 1}, 0.0);
    try {
        train(cfg, X, Tensor(), Y, SeededRng(1));
        FAIL() << "expected NonFiniteLoss";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NonFiniteLoss);
        EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
    }
}

TEST(Train, CovariateBlockIsTrailingOutputWeights) {
    const NetworkConfig cfg = parse_config("input 3\ncovariates 2\nloss mse\ndense units=4 activation=tanh\nconcatenate\n"
                                           "dense units=1\n");
    Network net(cfg);
    SeededRng init(1);
    net.initialize(init);
    const Tensor block = net.covariate_block();
    ASSERT_EQ(block.shape(), (Shape{1, 2}));
    EXPECT_EQ(block[0], net.params()[2].weight[4]);
    EXPECT_EQ(block[1], net.params()[2].weight[5]);
}

TEST(Serialize, RoundTrip) {
    const NetworkConfig cfg = parse_config(kToyConfig);
    const Toy toy = separable_toy(40, 8);
    NetworkConfig short_cfg = cfg;
    short_cfg.epochs = 3;
    const TrainedNetwork t = train(short_cfg, toy.X, toy.Z, toy.Y, SeededRng(2));
    const auto dir = test_util::scratch_dir("network");
    save_network(t, dir / "net");
    const TrainedNetwork back = load_network(dir / "net");
    EXPECT_EQ(config_to_string(back.config()), config_to_string(t.config()));
    EXPECT_EQ(back.best_epoch, t.best_epoch);
    ASSERT_EQ(back.log.size(), t.log.size());
    EXPECT_EQ(back.log.back().train_loss, t.log.back().train_loss);
    for (std::size_t l = 0; l < t.network.params().size(); ++l) EXPECT_EQ(back.network.params()[l].weight, t.network.params()[l].weight);
}
