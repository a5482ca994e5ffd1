#include <gtest/gtest.h>

#include <cmath>

#include "eigenlen/ndiff.hpp"

using namespace eigenlen;
using ndiff::Matrix;
using ndiff::Mode;
using ndiff::Param;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (auto& v : m.d) v = rng.uniform(-scale, scale);
    return m;
}

double weighted_sum(const Matrix& y, const Matrix& coef) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.d[i] * coef.d[i];
    return s;
}

// Gradient check of a layer with respect to its own input: the input is
// wrapped in a Param so the shared checker drives it.
template <typename Layer>
double input_grad_check(Layer& layer, int rows, int cols, Rng& rng) {
    Param input(rows, cols);
    input.value = random_matrix(rows, cols, rng);
    Matrix coef;
    {
        Matrix probe = layer.forward(input.value, Mode::Train);
        coef = random_matrix(probe.rows, probe.cols, rng);
    }
    auto loss = [&] { return weighted_sum(layer.forward(input.value, Mode::Train), coef); };
    auto grad = [&] {
        layer.forward(input.value, Mode::Train);
        input.grad = layer.backward(coef);
    };
    return ndiff::grad_check(loss, grad, {&input});
}

}  // namespace

TEST(Matmul, AgainstNaiveTripleLoop) {
    Rng rng(1);
    const Matrix a = random_matrix(7, 5, rng), b = random_matrix(5, 9, rng);
    const Matrix c = ndiff::matmul(a, b);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 9; ++j) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
            EXPECT_NEAR(c(i, j), s, 1e-12);
        }
    // transposed variants agree with explicit transposition
    const Matrix ant = ndiff::matmul_nt(a, random_matrix(9, 5, rng));
    EXPECT_EQ(ant.rows, 7);
    EXPECT_EQ(ant.cols, 9);
    const Matrix atn = ndiff::matmul_tn(a, random_matrix(7, 9, rng));
    EXPECT_EQ(atn.rows, 5);
    EXPECT_EQ(atn.cols, 9);
}

TEST(Linear, IdentityWeights) {
    Rng rng(2);
    ndiff::Linear lin(3, 3, rng);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) lin.w.value(i, j) = i == j ? 1.0 : 0.0;
    const Matrix x = random_matrix(4, 3, rng);
    const Matrix y = lin.forward(x, Mode::Train);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.d[i], x.d[i]);
}

TEST(Linear, BackwardIsUpstreamTimesWT) {
    Rng rng(3);
    ndiff::Linear lin(4, 6, rng);
    const Matrix x = random_matrix(5, 4, rng);
    lin.forward(x, Mode::Train);
    const Matrix dy = random_matrix(5, 6, rng);
    const Matrix dx = lin.backward(dy);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 4; ++k) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) s += dy(i, j) * lin.w.value(k, j);
            EXPECT_NEAR(dx(i, k), s, 1e-12);
        }
}

TEST(Linear, ShapeErrorNamesLayer) {
    Rng rng(4);
    ndiff::Linear lin(4, 6, rng);
    const Matrix bad = random_matrix(5, 3, rng);
    EXPECT_THROW(lin.forward(bad, Mode::Train), std::invalid_argument);
}

TEST(LeakyRelu, Values) {
    ndiff::LeakyRelu relu;  // slope 0.01
    Matrix x(1, 2);
    x(0, 0) = -1.0;
    x(0, 1) = 2.0;
    const Matrix y = relu.forward(x, Mode::Train);
    EXPECT_DOUBLE_EQ(y(0, 0), -0.01);
    EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(BatchNorm, TrainModeStandardizes) {
    Rng rng(5);
    ndiff::BatchNorm bn(3);
    const Matrix x = random_matrix(64, 3, rng, 4.0);
    const Matrix y = bn.forward(x, Mode::Train);
    for (int j = 0; j < 3; ++j) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < 64; ++i) mean += y(i, j);
        mean /= 64;
        for (int i = 0; i < 64; ++i) var += (y(i, j) - mean) * (y(i, j) - mean);
        var /= 64;
        EXPECT_NEAR(mean, 0.0, 1e-9);
        EXPECT_NEAR(var, 1.0, 1e-3);  // eps shifts the variance slightly
    }
}

TEST(BatchNorm, EvalModeIsDeterministicAffine) {
    Rng rng(6);
    ndiff::BatchNorm bn(2);
    for (int warm = 0; warm < 5; ++warm) bn.forward(random_matrix(16, 2, rng), Mode::Train);
    const Matrix x = random_matrix(8, 2, rng);
    const Matrix y1 = bn.forward(x, Mode::Eval);
    const Matrix y2 = bn.forward(x, Mode::Eval);
    for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_DOUBLE_EQ(y1.d[i], y2.d[i]);
    // affine in x: f(2x) - f(x) == f(x) - f(0) per coordinate
    Matrix x2 = x;
    for (auto& v : x2.d) v *= 2.0;
    Matrix zero(8, 2);
    const Matrix y3 = bn.forward(x2, Mode::Eval);
    const Matrix y0 = bn.forward(zero, Mode::Eval);
    for (std::size_t i = 0; i < y1.size(); ++i)
        EXPECT_NEAR(y3.d[i] - y1.d[i], y1.d[i] - y0.d[i], 1e-9);
}

TEST(BatchNorm, TrainRequiresBatch) {
    ndiff::BatchNorm bn(2);
    Matrix x(1, 2);
    EXPECT_THROW(bn.forward(x, Mode::Train), std::invalid_argument);
}

TEST(MaxPool, GradientOnlyAtArgmax) {
    Rng rng(7);
    ndiff::MaxPoolOverPoints pool(4);
    const Matrix x = random_matrix(12, 3, rng);
    const Matrix y = pool.forward(x, Mode::Train);
    EXPECT_EQ(y.rows, 3);
    Matrix dy(3, 3);
    for (auto& v : dy.d) v = 1.0;
    const Matrix dx = pool.backward(dy);
    int nonzero = 0;
    for (double v : dx.d)
        if (v != 0.0) ++nonzero;
    EXPECT_EQ(nonzero, 9);  // one winner per (cloud, feature)
}

TEST(SoftmaxOverPoints, NormalizesPerCloud) {
    Rng rng(8);
    ndiff::SoftmaxOverPoints softmax(5);
    const Matrix x = random_matrix(15, 2, rng, 3.0);
    const Matrix y = softmax.forward(x, Mode::Train);
    for (int g = 0; g < 3; ++g)
        for (int j = 0; j < 2; ++j) {
            double sum = 0.0;
            for (int i = 0; i < 5; ++i) sum += y(g * 5 + i, j);
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
}

TEST(GradCheck, EveryLayerAgainstFiniteDifferences) {
    Rng rng(9);
    {
        ndiff::Linear lin(4, 3, rng);
        Matrix x = random_matrix(6, 4, rng);
        Matrix coef = random_matrix(6, 3, rng);
        auto loss = [&] { return weighted_sum(lin.forward(x, Mode::Train), coef); };
        auto grad = [&] {
            lin.forward(x, Mode::Train);
            lin.backward(coef);
        };
        EXPECT_LT(ndiff::grad_check(loss, grad, {&lin.w, &lin.b}), 1e-4);
    }
    {
        ndiff::BatchNorm bn(3);
        Rng init(10);
        for (auto& v : bn.gamma.value.d) v = init.uniform(0.5, 1.5);
        for (auto& v : bn.beta.value.d) v = init.uniform(-0.5, 0.5);
        Matrix x = random_matrix(8, 3, rng);
        Matrix coef = random_matrix(8, 3, rng);
        auto loss = [&] { return weighted_sum(bn.forward(x, Mode::Train), coef); };
        auto grad = [&] {
            bn.forward(x, Mode::Train);
            bn.backward(coef);
        };
        EXPECT_LT(ndiff::grad_check(loss, grad, {&bn.gamma, &bn.beta}), 1e-4);
    }
    {
        ndiff::LeakyRelu relu;
        EXPECT_LT(input_grad_check(relu, 6, 4, rng), 1e-4);
    }
    {
        ndiff::Sigmoid sig;
        EXPECT_LT(input_grad_check(sig, 6, 4, rng), 1e-4);
    }
    {
        ndiff::SoftmaxOverPoints softmax(4);
        EXPECT_LT(input_grad_check(softmax, 8, 2, rng), 1e-4);
    }
    {
        ndiff::MaxPoolOverPoints pool(4);
        EXPECT_LT(input_grad_check(pool, 8, 3, rng), 1e-4);
    }
    {
        // BatchNorm input gradient in train mode (batch statistics chain)
        ndiff::BatchNorm bn(3);
        EXPECT_LT(input_grad_check(bn, 8, 3, rng), 1e-4);
    }
}

TEST(GradCheck, LinearLeastSquaresIsExact) {
    Rng rng(11);
    ndiff::Linear lin(3, 2, rng);
    const Matrix x = random_matrix(8, 3, rng);
    const Matrix target = random_matrix(8, 2, rng);
    auto forward_loss = [&] {
        const Matrix y = lin.forward(x, Mode::Train);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i)
            s += (y.d[i] - target.d[i]) * (y.d[i] - target.d[i]);
        return s;
    };
    auto grad = [&] {
        const Matrix y = lin.forward(x, Mode::Train);
        Matrix dy(y.rows, y.cols);
        for (std::size_t i = 0; i < y.size(); ++i) dy.d[i] = 2.0 * (y.d[i] - target.d[i]);
        lin.backward(dy);
    };
    EXPECT_LT(ndiff::grad_check(forward_loss, grad, {&lin.w, &lin.b}), 1e-8);
}

TEST(GradCheck, MlpWithNormAndActivation) {
    Rng rng(12);
    ndiff::Mlp mlp({4, 8, 3}, rng);
    const Matrix x = random_matrix(6, 4, rng);
    const Matrix coef = random_matrix(6, 3, rng);
    auto loss = [&] { return weighted_sum(mlp.forward(x, Mode::Train), coef); };
    auto grad = [&] {
        mlp.forward(x, Mode::Train);
        mlp.backward(coef);
    };
    std::vector<Param*> params;
    mlp.collect_params(params);
    EXPECT_LT(ndiff::grad_check(loss, grad, params), 1e-4);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
    Param p(1, 2);
    p.value.d = {1.0, -2.0};
    p.grad.d = {0.5, -3.0};
    ndiff::adam_step({&p}, 0.1);
    EXPECT_NEAR(p.value.d[0], 1.0 - 0.1, 1e-6);
    EXPECT_NEAR(p.value.d[1], -2.0 + 0.1, 1e-6);
    EXPECT_DOUBLE_EQ(p.grad.d[0], 0.0);  // grads zeroed
}

TEST(Adam, ZeroGradLeavesValue) {
    Param p(1, 1);
    p.value.d = {3.5};
    ndiff::adam_step({&p}, 0.1);
    EXPECT_DOUBLE_EQ(p.value.d[0], 3.5);
}

TEST(Adam, ConvergesOnQuadratic) {
    Param p(1, 1);
    p.value.d = {0.0};
    for (int step = 0; step < 200; ++step) {
        p.grad.d[0] = 2.0 * (p.value.d[0] - 3.0);
        ndiff::adam_step({&p}, 0.1);
    }
    EXPECT_LT(std::abs(p.value.d[0] - 3.0), 0.05);
}

TEST(Backward, StaleCacheIsContractError) {
    Rng rng(13);
    ndiff::Linear lin(2, 2, rng);
    Matrix dy(3, 2);
    EXPECT_THROW(lin.backward(dy), std::logic_error);
}

TEST(FusedNormActivation, MatchesUnfusedSequence) {
    Rng rng(30);
    ndiff::BatchNorm bn_fused(5), bn_plain(5);
    for (int j = 0; j < 5; ++j) {
        const double g = rng.uniform(0.5, 1.5), b = rng.uniform(-0.5, 0.5);
        bn_fused.gamma.value.d[static_cast<std::size_t>(j)] = g;
        bn_plain.gamma.value.d[static_cast<std::size_t>(j)] = g;
        bn_fused.beta.value.d[static_cast<std::size_t>(j)] = b;
        bn_plain.beta.value.d[static_cast<std::size_t>(j)] = b;
    }
    ndiff::LeakyRelu relu_fused, relu_plain;
    const Matrix x = random_matrix(12, 5, rng, 2.0);
    const Matrix dy = random_matrix(12, 5, rng);

    const Matrix y_fused = bn_fused.forward(x, Mode::Train, &relu_fused);
    Matrix y_plain = bn_plain.forward(x, Mode::Train);
    y_plain = relu_plain.forward(std::move(y_plain), Mode::Train);
    for (std::size_t i = 0; i < y_fused.size(); ++i)
        EXPECT_DOUBLE_EQ(y_fused.d[i], y_plain.d[i]);

    const Matrix dx_fused = bn_fused.backward(dy, &relu_fused);
    Matrix up = relu_plain.backward(dy);
    const Matrix dx_plain = bn_plain.backward(up);
    for (std::size_t i = 0; i < dx_fused.size(); ++i)
        EXPECT_NEAR(dx_fused.d[i], dx_plain.d[i], 1e-12);
    for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_NEAR(bn_fused.gamma.grad.d[j], bn_plain.gamma.grad.d[j], 1e-12);
        EXPECT_NEAR(bn_fused.beta.grad.d[j], bn_plain.beta.grad.d[j], 1e-12);
    }
}

TEST(MatmulBias, MatchesSeparateBiasAdd) {
    Rng rng(31);
    const Matrix a = random_matrix(9, 5, rng), w = random_matrix(5, 11, rng);
    Matrix bias(1, 11);
    for (auto& v : bias.d) v = rng.uniform(-1, 1);
    const Matrix fused = ndiff::matmul_bias(a, w, bias);
    Matrix plain = ndiff::matmul(a, w);
    for (int i = 0; i < plain.rows; ++i)
        for (int j = 0; j < plain.cols; ++j) plain(i, j) += bias.d[static_cast<std::size_t>(j)];
    // summation order differs (bias seeds the accumulation), so compare to ulp scale
    for (std::size_t i = 0; i < fused.size(); ++i)
        EXPECT_NEAR(fused.d[i], plain.d[i], 1e-12);
}
