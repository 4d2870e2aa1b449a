#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "oracle_values.hpp"
#include "paramscope/adam.hpp"
#include "paramscope/grad_check.hpp"
#include "paramscope/kernels.hpp"
#include "paramscope/rng.hpp"
#include "test_util.hpp"

using namespace paramscope;
using testutil::random_tensor;

// ---- rng ----------------------------------------------------------------------

TEST(Rng, MatchesReferenceSequence) {
    Rng r(42);
    for (auto want : oracle::kXoshiro42) EXPECT_EQ(r.next(), want);
}

TEST(Rng, SplitSeedMatchesReference) {
    for (std::uint64_t k = 0; k < oracle::kSplit42.size(); ++k) EXPECT_EQ(split_seed(42, k), oracle::kSplit42[k]);
}

TEST(Rng, BoxMullerMatchesReference) {
    Rng r(42);
    for (double want : oracle::kNormal42) EXPECT_DOUBLE_EQ(r.normal(), want);
}

TEST(Rng, BelowStaysInRange) {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) EXPECT_LT(r.below(13), 13u);
}

TEST(NormalInit, ZeroStdGivesMean) {
    Rng r(1);
    const Tensor t = normal_init({2, 2}, 0.0, 0.0, r);
    for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(NormalInit, FirstValueMatchesReference) {
    Rng r(42);
    const Tensor t = normal_init({4}, 0.0, 1.0, r);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(t[i], oracle::kNormal42[i]);
}

TEST(NormalInit, SampleMoments) {
    Rng r(2024);
    const Tensor t = normal_init({100000}, 0.0, 0.02, r);
    double s = 0, s2 = 0;
    for (double v : t.values()) s += v;
    const double mean = s / t.size();
    for (double v : t.values()) s2 += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 0.001);
    EXPECT_NEAR(std::sqrt(s2 / t.size()), 0.02, 0.002);
}

TEST(NormalInit, NegativeStdRejected) {
    Rng r(1);
    EXPECT_THROW(normal_init({3}, 0.0, -1.0, r), std::invalid_argument);
}

TEST(NormalInit, SameSeedBitIdentical) {
    Rng a(99), b(99);
    EXPECT_EQ(normal_init({17, 5}, 0.1, 0.3, a), normal_init({17, 5}, 0.1, 0.3, b));
}

// ---- tensor -------------------------------------------------------------------

TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(Tensor(Shape{}), ShapeError);
    EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
    const std::vector<double> three{1, 2, 3};
    EXPECT_THROW(Tensor({2, 2}, three), ShapeError);
}

TEST(Tensor, StorageIs64ByteAligned) {
    for (std::size_t n : {1, 3, 17, 1000}) {
        Tensor t({n});
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % 64, 0u);
    }
}

TEST(Tensor, ReshapeKeepsData) {
    const Tensor t = random_tensor({2, 6}, 3);
    const Tensor r = t.reshaped({3, 4});
    EXPECT_EQ(r.shape(), (Shape{3, 4}));
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(r[i], t[i]);
    EXPECT_THROW(t.reshaped({5}), ShapeError);
}

// ---- linear -------------------------------------------------------------------

TEST(Linear, Identity) {
    const std::vector<double> eye{1, 0, 0, 1};
    const Tensor I({2, 2}, eye);
    const Tensor y = linear_forward(I, I, Tensor({2}));
    EXPECT_EQ(y, I);
}

TEST(Linear, HandArithmetic) {
    const std::vector<double> x{1, 2}, w{1, 0, 0, 1}, b{1, 1};
    const Tensor y = linear_forward(Tensor({1, 2}, x), Tensor({2, 2}, w), Tensor({2}, b));
    EXPECT_EQ(y[0], 2.0);
    EXPECT_EQ(y[1], 3.0);
}

TEST(Linear, MatchesTripleLoop) {
    const std::size_t B = 7, in = 13, out = 5;
    const Tensor x = random_tensor({B, in}, 1, 4.0), W = random_tensor({in, out}, 2, 4.0), b = random_tensor({out}, 3);
    const Tensor y = linear_forward(x, W, b);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < out; ++j) {
            double s = b[j];
            for (std::size_t k = 0; k < in; ++k) s += x.at(i, k) * W.at(k, j);
            EXPECT_LT(testutil::rel(y.at(i, j), s), 1e-10);
        }
}

TEST(Linear, ShapeMismatch) {
    EXPECT_THROW(linear_forward(Tensor({2, 3}), Tensor({4, 2}), Tensor({2})), ShapeError);
    EXPECT_THROW(linear_forward(Tensor({2, 3}), Tensor({3, 2}), Tensor({3})), ShapeError);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
    Tensor x = random_tensor({4, 6}, 11), W = random_tensor({6, 3}, 12), b = random_tensor({3}, 13);
    const Tensor c = random_tensor({4, 3}, 14);
    auto f = [&] {
        const Tensor y = linear_forward(x, W, b);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
        return s;
    };
    const auto g = linear_backward(x, W, c);
    Tensor* ptrs[] = {&x, &W, &b};
    const Tensor grads[] = {g.dx, g.dW, g.db};
    Rng rng(5);
    EXPECT_LT(finite_difference_check(ptrs, grads, f, 1e-5, rng), 1e-8);
}

// ---- relu ---------------------------------------------------------------------

TEST(Relu, Values) {
    const std::vector<double> v{-1.0, 3.0};
    const Tensor y = relu(Tensor({2}, v));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 3.0);
}

TEST(Relu, BackwardMatchesFiniteDifferences) {
    Tensor x = random_tensor({50}, 21);
    for (auto& v : x.values())
        if (std::abs(v) < 0.01) v = 0.5;  // stay away from the kink
    const Tensor c = random_tensor({50}, 22);
    auto f = [&] {
        const Tensor y = relu(x);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
        return s;
    };
    Tensor* ptrs[] = {&x};
    const Tensor grads[] = {relu_backward(x, c)};
    Rng rng(1);
    EXPECT_LT(finite_difference_check(ptrs, grads, f, 1e-6, rng), 1e-6);
}

// ---- softmax and loss -----------------------------------------------------------

TEST(Softmax, UniformLogits) {
    const Tensor p = softmax(Tensor({3, 10}, 4.2));
    for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.1);
}

TEST(Softmax, ClosedForm) {
    const std::vector<double> z{0.0, std::log(3.0)};
    const Tensor p = softmax(Tensor({1, 2}, z));
    EXPECT_NEAR(p[0], 0.25, 1e-15);
    EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, ExtremeLogitsMatchExtendedPrecision) {
    const std::vector<double> z{1e4, -1e4, 0.0, 9999.0};
    const Tensor p = softmax(Tensor({1, 4}, z));
    ASSERT_TRUE(p.all_finite());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p[i], oracle::kSoftmaxExtreme[i], 1e-15);
}

TEST(Softmax, RowsSumToOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor p = softmax(random_tensor({8, 10}, seed, 50.0));
        for (std::size_t r = 0; r < 8; ++r) {
            double s = 0;
            for (std::size_t k = 0; k < 10; ++k) {
                EXPECT_GE(p.at(r, k), 0.0);
                s += p.at(r, k);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(CrossEntropy, PerfectAndUniform) {
    std::vector<double> onehot(10, 0.0);
    onehot[3] = 1.0;
    const int three[] = {3};
    EXPECT_EQ(cross_entropy(Tensor({1, 10}, onehot), three), 0.0);
    EXPECT_NEAR(cross_entropy(Tensor({1, 10}, 0.1), three), std::log(10.0), 1e-12);
    EXPECT_NEAR(std::log(10.0), 2.302585, 1e-6);
}

TEST(CrossEntropy, MatchesDirectSummation) {
    const Tensor logits = random_tensor({6, 10}, 31, 3.0);
    const std::vector<int> y{0, 9, 4, 4, 2, 7};
    const Tensor p = softmax(logits);
    long double s = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        long double m = -1e300L, z = 0;
        for (std::size_t k = 0; k < 10; ++k) m = std::max<long double>(m, logits.at(i, k));
        for (std::size_t k = 0; k < 10; ++k) z += std::exp(static_cast<long double>(logits.at(i, k)) - m);
        s += -(logits.at(i, y[i]) - m - std::log(z));
    }
    const double want = static_cast<double>(s / 6);
    EXPECT_NEAR(cross_entropy(p, y), want, 1e-12);
    EXPECT_NEAR(softmax_cross_entropy(logits, y), want, 1e-12);
    EXPECT_GE(cross_entropy(p, y), 0.0);
}

TEST(CrossEntropy, LogitGradientMatchesFiniteDifferences) {
    Tensor logits = random_tensor({5, 10}, 41, 2.0);
    const std::vector<int> y{1, 2, 3, 4, 5};
    Tensor p;
    softmax_cross_entropy(logits, y, &p);
    Tensor* ptrs[] = {&logits};
    const Tensor grads[] = {softmax_cross_entropy_backward(p, y)};
    Rng rng(2);
    EXPECT_LT(finite_difference_check(ptrs, grads, [&] { return softmax_cross_entropy(logits, y); }, 1e-5, rng),
              1e-6);
}

// ---- convolution ---------------------------------------------------------------

TEST(Conv2d, DeltaKernelCrops) {
    const Tensor x = random_tensor({2, 1, 6, 5}, 51);
    Tensor k({1, 1, 3, 3});
    k[4] = 1.0;
    const Tensor y = conv2d_forward(x, k, Tensor({1}));
    ASSERT_EQ(y.shape(), (Shape{2, 1, 4, 3}));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[(b * 4 + i) * 3 + j], x[(b * 6 + i + 1) * 5 + j + 1]);
}

TEST(Conv2d, OnesKernelOnOnes) {
    const Tensor y = conv2d_forward(Tensor({1, 1, 4, 4}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}));
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    for (double v : y.values()) EXPECT_EQ(v, 9.0);
}

TEST(Conv2d, MatchesSixLoopBruteForce) {
    const std::size_t B = 3, Ci = 2, Co = 4, H = 7, W = 6;
    const Tensor x = random_tensor({B, Ci, H, W}, 61, 4.0), k = random_tensor({Co, Ci, 3, 3}, 62, 4.0),
                 bias = random_tensor({Co}, 63);
    const Tensor y = conv2d_forward(x, k, bias);
    const std::size_t Ho = H - 2, Wo = W - 2;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double s = bias[o];
                    for (std::size_t c = 0; c < Ci; ++c)
                        for (std::size_t u = 0; u < 3; ++u)
                            for (std::size_t v = 0; v < 3; ++v)
                                s += x[((b * Ci + c) * H + i + u) * W + j + v] * k[((o * Ci + c) * 3 + u) * 3 + v];
                    EXPECT_LT(testutil::rel(y[((b * Co + o) * Ho + i) * Wo + j], s), 1e-10);
                }
}

TEST(Conv2d, Errors) {
    EXPECT_THROW(conv2d_forward(Tensor({1, 1, 2, 5}), Tensor({1, 1, 3, 3}), Tensor({1})), ShapeError);
    EXPECT_THROW(conv2d_forward(Tensor({1, 2, 5, 5}), Tensor({1, 1, 3, 3}), Tensor({1})), ShapeError);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
    Tensor x = random_tensor({2, 2, 6, 6}, 71), k = random_tensor({3, 2, 3, 3}, 72), b = random_tensor({3}, 73);
    const Tensor c = random_tensor({2, 3, 4, 4}, 74);
    auto f = [&] {
        const Tensor y = conv2d_forward(x, k, b);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
        return s;
    };
    const auto g = conv2d_backward(x, k, c);
    Tensor* ptrs[] = {&x, &k, &b};
    const Tensor grads[] = {g.dx, g.dk, g.db};
    Rng rng(3);
    EXPECT_LT(finite_difference_check(ptrs, grads, f, 1e-5, rng), 1e-6);
}

// ---- attention -----------------------------------------------------------------

namespace {

// Per-head loops straight from the definition.
std::vector<double> attention_oracle(const Tensor& x, const Tensor& Wq, const Tensor& Wk, const Tensor& Wv,
                                     const Tensor& Wo, std::size_t nh) {
    const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2), dh = d / nh;
    auto proj = [&](const Tensor& W) {
        std::vector<double> out(B * T * d, 0.0);
        for (std::size_t r = 0; r < B * T; ++r)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t k = 0; k < d; ++k) out[r * d + j] += x[r * d + k] * W.at(k, j);
        return out;
    };
    const auto q = proj(Wq), k = proj(Wk), v = proj(Wv);
    std::vector<double> concat(B * T * d, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < nh; ++h)
            for (std::size_t i = 0; i < T; ++i) {
                std::vector<double> s(T);
                double m = -1e300;
                for (std::size_t j = 0; j < T; ++j) {
                    double dot = 0;
                    for (std::size_t e = 0; e < dh; ++e)
                        dot += q[(b * T + i) * d + h * dh + e] * k[(b * T + j) * d + h * dh + e];
                    s[j] = dot / std::sqrt(static_cast<double>(dh));
                    m = std::max(m, s[j]);
                }
                double z = 0;
                for (auto& e : s) z += (e = std::exp(e - m));
                for (std::size_t j = 0; j < T; ++j)
                    for (std::size_t e = 0; e < dh; ++e)
                        concat[(b * T + i) * d + h * dh + e] += s[j] / z * v[(b * T + j) * d + h * dh + e];
            }
    std::vector<double> out(B * T * d, 0.0);
    for (std::size_t r = 0; r < B * T; ++r)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k2 = 0; k2 < d; ++k2) out[r * d + j] += concat[r * d + k2] * Wo.at(k2, j);
    return out;
}

}  // namespace

TEST(Attention, SingleTokenIsValueThenOutput) {
    const std::size_t d = 6;
    const Tensor x = random_tensor({2, 1, d}, 81), Wq = random_tensor({d, d}, 82), Wk = random_tensor({d, d}, 83),
                 Wv = random_tensor({d, d}, 84), Wo = random_tensor({d, d}, 85);
    AttentionCache cache;
    const Tensor y = multi_head_attention(x, Wq, Wk, Wv, Wo, 3, &cache);
    for (double p : cache.probs.values()) EXPECT_EQ(p, 1.0);
    const Tensor want = matmul(matmul(x.reshaped({2, d}), Wv), Wo);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_LT(testutil::rel(y[i], want[i]), 1e-12);
}

TEST(Attention, ZeroQueryKeyAveragesTokens) {
    const std::size_t T = 5, d = 4;
    const Tensor x = random_tensor({1, T, d}, 91), Wv = random_tensor({d, d}, 92), Wo = random_tensor({d, d}, 93);
    const Tensor zero({d, d});
    const Tensor y = multi_head_attention(x, zero, zero, Wv, Wo, 1);
    Tensor mean({1, d});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[t * d + j] / T;
    const Tensor want = matmul(matmul(mean, Wv), Wo);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(y[t * d + j], want[j], 1e-12);
}

TEST(Attention, MatchesPerHeadBruteForce) {
    const std::size_t B = 2, T = 5, d = 8;
    for (std::size_t nh : {1, 2, 4}) {
        const Tensor x = random_tensor({B, T, d}, 100 + nh, 4.0), Wq = random_tensor({d, d}, 201),
                     Wk = random_tensor({d, d}, 202), Wv = random_tensor({d, d}, 203, 4.0),
                     Wo = random_tensor({d, d}, 204, 4.0);
        const Tensor y = multi_head_attention(x, Wq, Wk, Wv, Wo, nh);
        const auto want = attention_oracle(x, Wq, Wk, Wv, Wo, nh);
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_LT(testutil::rel(y[i], want[i]), 1e-10) << nh;
    }
}

TEST(Attention, IndivisibleHeadsRejected) {
    const Tensor W({6, 6});
    EXPECT_THROW(multi_head_attention(Tensor({1, 2, 6}), W, W, W, W, 4), std::invalid_argument);
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
    const std::size_t B = 2, T = 4, d = 6, nh = 2;
    Tensor x = random_tensor({B, T, d}, 301), Wq = random_tensor({d, d}, 302), Wk = random_tensor({d, d}, 303),
           Wv = random_tensor({d, d}, 304), Wo = random_tensor({d, d}, 305);
    const Tensor c = random_tensor({B, T, d}, 306);
    auto f = [&] {
        const Tensor y = multi_head_attention(x, Wq, Wk, Wv, Wo, nh);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
        return s;
    };
    AttentionCache cache;
    multi_head_attention(x, Wq, Wk, Wv, Wo, nh, &cache);
    const auto g = attention_backward(x, Wq, Wk, Wv, Wo, nh, cache, c);
    Tensor* ptrs[] = {&x, &Wq, &Wk, &Wv, &Wo};
    const Tensor grads[] = {g.dx, g.dWq, g.dWk, g.dWv, g.dWo};
    Rng rng(4);
    EXPECT_LT(finite_difference_check(ptrs, grads, f, 1e-5, rng), 1e-6);
}

// ---- layer norm ----------------------------------------------------------------

TEST(LayerNorm, ConstantTokenGivesBeta) {
    const Tensor beta = random_tensor({5}, 401);
    const Tensor y = layer_norm(Tensor({3, 5}, 2.5), random_tensor({5}, 402), beta);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(y.at(r, j), beta[j], 1e-12);
}

TEST(LayerNorm, StandardizesRows) {
    const Tensor y = layer_norm(random_tensor({4, 32}, 403, 10.0), Tensor({32}, 1.0), Tensor({32}));
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0, v = 0;
        for (std::size_t j = 0; j < 32; ++j) m += y.at(r, j) / 32;
        for (std::size_t j = 0; j < 32; ++j) v += (y.at(r, j) - m) * (y.at(r, j) - m) / 32;
        EXPECT_NEAR(m, 0.0, 1e-9);
        EXPECT_NEAR(v, 1.0, 1e-9);
    }
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
    Tensor x = random_tensor({3, 7}, 404), gamma = random_tensor({7}, 405), beta = random_tensor({7}, 406);
    const Tensor c = random_tensor({3, 7}, 407);
    auto f = [&] {
        const Tensor y = layer_norm(x, gamma, beta);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
        return s;
    };
    LayerNormCache cache;
    layer_norm(x, gamma, beta, kLayerNormEps, &cache);
    const auto g = layer_norm_backward(gamma, cache, c);
    Tensor* ptrs[] = {&x, &gamma, &beta};
    const Tensor grads[] = {g.dx, g.dgamma, g.dbeta};
    Rng rng(6);
    EXPECT_LT(finite_difference_check(ptrs, grads, f, 1e-5, rng), 1e-6);
}

// ---- adam ----------------------------------------------------------------------

TEST(Adam, ZeroGradientIsIdentity) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor p = random_tensor({4, 3}, seed);
        const Tensor before = p;
        AdamState s(p.shape(), {});
        for (int i = 0; i < 5; ++i) adam_step(p, Tensor({4, 3}), s);
        EXPECT_EQ(p, before);
        EXPECT_EQ(s.t, 5u);
    }
}

TEST(Adam, FirstStepClosedForm) {
    Tensor p({1});
    AdamState s(p.shape(), {});
    adam_step(p, Tensor({1}, 1.0), s);
    EXPECT_DOUBLE_EQ(p[0], oracle::kAdamFirst);
    EXPECT_NEAR(p[0], -0.001, 1e-10);
}

TEST(Adam, TwoStepTrace) {
    const std::vector<double> p0{0.5, -1.0}, g1{1.0, -2.0}, g2{0.5, 3.0};
    Tensor p({2}, p0);
    AdamState s(p.shape(), {});
    adam_step(p, Tensor({2}, g1), s);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(p[i], oracle::kAdamStep1[i], 1e-15);
    adam_step(p, Tensor({2}, g2), s);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(p[i], oracle::kAdamStep2[i], 1e-15);
    EXPECT_EQ(s.t, 2u);
}

TEST(Adam, NonFiniteGradientAbortsStep) {
    Tensor p({2}, 1.0);
    AdamState s(p.shape(), {});
    Tensor g({2});
    g[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(adam_step(p, g, s), NonFiniteGradient);
    EXPECT_EQ(p, Tensor({2}, 1.0));
    EXPECT_EQ(s.t, 0u);
}

TEST(Adam, ShapeMismatch) {
    Tensor p({2});
    AdamState s(p.shape(), {});
    EXPECT_THROW(adam_step(p, Tensor({3}), s), ShapeError);
}
