#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "handnet/layers.hpp"
#include "oracles.hpp"

using namespace handnet;

namespace {

// Scalar probe L = <forward(x), r> so the analytic input gradient is backward(r).
TensorD probe(std::uint64_t seed, const Shape& s) { return oracle::random_tensor<double>(s, seed); }

}  // namespace

TEST(Conv, OneByOneKernel) {
  const TensorF x = TensorF::from(Shape{1, 1, 1, 1}, {3});
  const TensorF k = TensorF::from(Shape{1, 1, 1, 1}, {2});
  const TensorF b = TensorF::from(Shape{1}, {1});
  EXPECT_EQ(conv2d_forward(x, ConvParams<float>{k, b, 1, 0})[0], 7.0f);
}

TEST(Conv, IdentityKernelSumsPatch) {
  const TensorF x = TensorF::from(Shape{1, 2, 2, 1}, {1, 2, 3, 4});
  const TensorF k = TensorF::from(Shape{2, 2, 1, 1}, {1, 0, 0, 1});
  const TensorF b(Shape{1});
  const TensorF y = conv2d_forward(x, ConvParams<float>{k, b, 1, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 5.0f);
}

TEST(Conv, MatchesNestedLoopOracle) {
  std::uint64_t seed = 100;
  for (std::size_t hw : {4u, 6u, 8u})
    for (std::size_t cin : {1u, 3u})
      for (std::size_t k : {1u, 3u, 5u})
        for (std::size_t stride : {1u, 2u})
          for (std::size_t pad : {0u, 2u}) {
            if (hw + 2 * pad < k) continue;
            const auto x = oracle::random_tensor<float>(Shape{2, hw, hw, cin}, ++seed);
            const auto ker = oracle::random_tensor<float>(Shape{k, k, cin, 5}, ++seed);
            const auto b = oracle::random_tensor<float>(Shape{5}, ++seed);
            const TensorF got = conv2d_forward(x, ConvParams<float>{ker, b, stride, pad});
            const TensorF ref = oracle::conv2d(x, ker, b, stride, pad);
            ASSERT_EQ(got.shape(), ref.shape());
            for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-5);
          }
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  const auto x = oracle::random_tensor<double>(Shape{1, 4, 4, 2}, 1);
  const auto k = oracle::random_tensor<double>(Shape{3, 3, 2, 3}, 2);
  const auto b = oracle::random_tensor<double>(Shape{3}, 3);
  ConvCache<double> cache;
  const TensorD y = conv2d_forward(x, ConvParams<double>{k, b, 1, 1}, &cache);
  const TensorD r = probe(4, y.shape());
  const ConvGrads<double> g = conv2d_backward(r, ConvParams<double>{k, b, 1, 1}, cache);

  const auto dx = oracle::numeric_grad(
      [&](const TensorD& xx) { return oracle::dot(oracle::conv2d(xx, k, b, 1, 1), r); }, x);
  const auto dk = oracle::numeric_grad(
      [&](const TensorD& kk) { return oracle::dot(oracle::conv2d(x, kk, b, 1, 1), r); }, k);
  const auto db = oracle::numeric_grad(
      [&](const TensorD& bb) { return oracle::dot(oracle::conv2d(x, k, bb, 1, 1), r); }, b);
  EXPECT_LT(oracle::max_rel_error(g.d_input, dx), 1e-4);
  EXPECT_LT(oracle::max_rel_error(g.d_kernels, dk), 1e-4);
  EXPECT_LT(oracle::max_rel_error(g.d_bias, db), 1e-4);
}

TEST(Conv, StridedGradients) {
  const auto x = oracle::random_tensor<double>(Shape{2, 5, 5, 1}, 11);
  const auto k = oracle::random_tensor<double>(Shape{3, 3, 1, 2}, 12);
  const auto b = oracle::random_tensor<double>(Shape{2}, 13);
  ConvCache<double> cache;
  const TensorD y = conv2d_forward(x, ConvParams<double>{k, b, 2, 1}, &cache);
  const TensorD r = probe(14, y.shape());
  const auto g = conv2d_backward(r, ConvParams<double>{k, b, 2, 1}, cache);
  const auto dx = oracle::numeric_grad(
      [&](const TensorD& xx) { return oracle::dot(oracle::conv2d(xx, k, b, 2, 1), r); }, x);
  EXPECT_LT(oracle::max_rel_error(g.d_input, dx), 1e-4);
}

TEST(Conv, BackwardWithoutCacheIsUsageError) {
  const TensorD k(Shape{1, 1, 1, 1}, 1.0), b(Shape{1});
  EXPECT_THROW(conv2d_backward(TensorD(Shape{1, 1, 1, 1}), ConvParams<double>{k, b, 1, 0}, ConvCache<double>{}),
               UsageError);
}

TEST(Conv, ChannelMismatchIsDimensionError) {
  const TensorF x(Shape{1, 4, 4, 3});
  const TensorF k(Shape{3, 3, 2, 1}), b(Shape{1});
  EXPECT_THROW(conv2d_forward(x, ConvParams<float>{k, b, 1, 0}), DimensionError);
}

TEST(Pool, OutputSizeIsCeilMode) {
  EXPECT_EQ(pool_output_size(32, 3, 2), 16u);
  EXPECT_EQ(pool_output_size(16, 3, 2), 8u);
  EXPECT_EQ(pool_output_size(6, 3, 2), 3u);
  EXPECT_EQ(pool_output_size(2, 2, 2), 1u);
}

TEST(Pool, ConstantInputStaysConstant) {
  const TensorF x(Shape{1, 6, 6, 2}, 0.25f);
  const TensorF y = maxpool_forward(x, 3, 2);
  for (float v : y.data()) EXPECT_EQ(v, 0.25f);
}

TEST(Pool, RoutesGradientToMaximum) {
  const TensorF x = TensorF::from(Shape{1, 2, 2, 1}, {1, 2, 3, 4});
  PoolCache cache;
  const TensorF y = maxpool_forward(x, 2, 2, &cache);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0f);
  const TensorF dx = maxpool_backward(TensorF(Shape{1, 1, 1, 1}, 1.0f), cache);
  EXPECT_EQ(dx, TensorF::from(Shape{1, 2, 2, 1}, {0, 0, 0, 1}));
}

TEST(Pool, TiesGoToFirstElement) {
  const TensorF x(Shape{1, 2, 2, 1}, 1.0f);
  PoolCache cache;
  maxpool_forward(x, 2, 2, &cache);
  const TensorF dx = maxpool_backward(TensorF(Shape{1, 1, 1, 1}, 1.0f), cache);
  EXPECT_EQ(dx, TensorF::from(Shape{1, 2, 2, 1}, {1, 0, 0, 0}));
}

TEST(Pool, MatchesOracle) {
  for (std::size_t hw : {5u, 6u, 7u, 32u}) {
    const auto x = oracle::random_tensor<float>(Shape{2, hw, hw, 3}, hw);
    const TensorF got = maxpool_forward(x, 3, 2);
    const TensorF ref = oracle::maxpool(x, 3, 2);
    EXPECT_EQ(got, ref) << "size " << hw;
  }
}

TEST(Pool, BackwardConservesGradientMass) {
  const auto x = oracle::random_tensor<double>(Shape{1, 7, 7, 2}, 3);
  PoolCache cache;
  const TensorD y = maxpool_forward(x, 3, 2, &cache);
  const TensorD r = probe(5, y.shape());
  const TensorD dx = maxpool_backward(r, cache);
  EXPECT_NEAR(reduce(dx, ReduceKind::kSum)[0], reduce(r, ReduceKind::kSum)[0], 1e-12);
  const auto num = oracle::numeric_grad(
      [&](const TensorD& xx) { return oracle::dot(oracle::maxpool(xx, 3, 2), r); }, x, 1e-6);
  EXPECT_LT(oracle::max_rel_error(dx, num), 1e-4);
}

TEST(Relu, Examples) {
  EXPECT_EQ(relu_forward(TensorF::from(Shape{1}, {0}))[0], 0.0f);
  EXPECT_EQ(relu_forward(TensorF::from(Shape{2}, {-1, 2})), TensorF::from(Shape{2}, {0, 2}));
}

TEST(Relu, ZeroTakesZeroBranchInBackward) {
  ReluCache cache;
  relu_forward(TensorD::from(Shape{3}, {-1, 0, 2}), &cache);
  EXPECT_EQ(relu_backward(TensorD(Shape{3}, 1.0), cache), TensorD::from(Shape{3}, {0, 0, 1}));
}

TEST(Relu, GradientAwayFromKink) {
  auto x = oracle::random_tensor<double>(Shape{20}, 9);
  for (auto& v : x.data()) v += (v >= 0 ? 0.1 : -0.1);
  ReluCache cache;
  const TensorD y = relu_forward(x, &cache);
  const TensorD r = probe(10, y.shape());
  const auto num = oracle::numeric_grad([&](const TensorD& xx) { return oracle::dot(relu_forward(xx), r); }, x);
  EXPECT_LT(oracle::max_rel_error(relu_backward(r, cache), num), 1e-6);
}

TEST(Relu, CommutesWithMaxPool) {
  const auto x = oracle::random_tensor<float>(Shape{1, 8, 8, 4}, 21);
  EXPECT_EQ(maxpool_forward(relu_forward(x), 3, 2), relu_forward(maxpool_forward(x, 3, 2)));
}

TEST(Lrn, IdentityWhenAlphaZeroAndBiasOne) {
  const auto x = oracle::random_tensor<double>(Shape{1, 3, 3, 7}, 2);
  LrnParams p;
  p.bias = 1.0;
  p.alpha = 0.0;
  const TensorD y = lrn_forward(x, p);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(Lrn, SingleChannelHalf) {
  // k=1, alpha=n so the denominator is (1 + a^2)^beta; a=1, beta=1 -> 0.5
  LrnParams p;
  p.depth_radius = 1;
  p.bias = 1.0;
  p.alpha = 1.0;
  p.beta = 1.0;
  EXPECT_DOUBLE_EQ(lrn_forward(TensorD::from(Shape{1, 1, 1, 1}, {1.0}), p)[0], 0.5);
}

TEST(Lrn, MatchesOracleWithDefaults) {
  const auto x = oracle::random_tensor<double>(Shape{2, 3, 3, 9}, 4, -30, 30);
  const LrnParams p;
  const TensorD got = lrn_forward(x, p);
  const TensorD ref = oracle::lrn(x, p.depth_radius, p.bias, p.alpha, p.beta);
  EXPECT_LT(oracle::max_rel_error(got, ref), 1e-12);
}

TEST(Lrn, GradientMatchesFiniteDifferences) {
  const auto x = oracle::random_tensor<double>(Shape{1, 2, 2, 8}, 6, -3, 3);
  LrnParams p;
  p.alpha = 0.5;  // make the cross-channel term matter
  LrnCache<double> cache;
  const TensorD y = lrn_forward(x, p, &cache);
  const TensorD r = probe(7, y.shape());
  const auto num = oracle::numeric_grad(
      [&](const TensorD& xx) { return oracle::dot(oracle::lrn(xx, p.depth_radius, p.bias, p.alpha, p.beta), r); }, x);
  EXPECT_LT(oracle::max_rel_error(lrn_backward(r, p, cache), num), 1e-6);
}

TEST(Lrn, InvalidParamsAreConfigErrors) {
  LrnParams p;
  p.depth_radius = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = LrnParams{};
  p.bias = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Fc, Examples) {
  const TensorF eye = TensorF::from(Shape{2, 2}, {1, 0, 0, 1});
  const TensorF zero(Shape{2});
  const TensorF x = TensorF::from(Shape{1, 2}, {3, -4});
  EXPECT_EQ(fc_forward(x, FcParams<float>{eye, zero}), x);
  const TensorF ones = TensorF::from(Shape{2, 1}, {1, 1});
  const TensorF half = TensorF::from(Shape{1}, {0.5f});
  EXPECT_EQ(fc_forward(TensorF::from(Shape{1, 2}, {1, 2}), FcParams<float>{ones, half})[0], 3.5f);
}

TEST(Fc, GradientsMatchFiniteDifferences) {
  const auto x = oracle::random_tensor<double>(Shape{3, 6}, 1);
  const auto w = oracle::random_tensor<double>(Shape{6, 4}, 2);
  const auto b = oracle::random_tensor<double>(Shape{4}, 3);
  FcCache<double> cache;
  const TensorD y = fc_forward(x, FcParams<double>{w, b}, &cache);
  const TensorD r = probe(4, y.shape());
  const auto g = fc_backward(r, FcParams<double>{w, b}, cache);
  auto f = [&](const TensorD& xx, const TensorD& ww, const TensorD& bb) {
    double s = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t o = 0; o < 4; ++o) {
        double acc = bb[o];
        for (std::size_t i = 0; i < 6; ++i) acc += xx[n * 6 + i] * ww[i * 4 + o];
        s += acc * r[n * 4 + o];
      }
    return s;
  };
  EXPECT_LT(oracle::max_rel_error(g.d_input, oracle::numeric_grad([&](const TensorD& v) { return f(v, w, b); }, x)),
            1e-6);
  EXPECT_LT(oracle::max_rel_error(g.d_weights, oracle::numeric_grad([&](const TensorD& v) { return f(x, v, b); }, w)),
            1e-6);
  EXPECT_LT(oracle::max_rel_error(g.d_bias, oracle::numeric_grad([&](const TensorD& v) { return f(x, w, v); }, b)),
            1e-6);
}

TEST(Dropout, InferenceIsBitwiseIdentity) {
  const auto x = oracle::random_tensor<float>(Shape{4, 50}, 1);
  Rng rng(0);
  EXPECT_EQ(dropout_forward(x, 0.4, false, rng), x);
}

TEST(Dropout, RateZeroIsIdentityInTraining) {
  const auto x = oracle::random_tensor<float>(Shape{4, 50}, 1);
  Rng rng(0);
  EXPECT_EQ(dropout_forward(x, 0.0, true, rng), x);
}

TEST(Dropout, PreservesExpectation) {
  const TensorD x(Shape{100000}, 1.0);
  Rng rng(42);
  DropoutCache<double> cache;
  const TensorD y = dropout_forward(x, 0.4, true, rng, &cache);
  const double mean = reduce(y, ReduceKind::kMean)[0];
  EXPECT_GE(mean, 0.97);
  EXPECT_LE(mean, 1.03);
  for (double v : y.data()) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.6) < 1e-12);
  // backward applies the same mask
  EXPECT_EQ(dropout_backward(x, cache), y);
}

TEST(Dropout, InvalidRatesAreConfigErrors) {
  EXPECT_THROW(validate_dropout_rate(1.0), ConfigError);
  EXPECT_THROW(validate_dropout_rate(-0.1), ConfigError);
  Rng rng(0);
  EXPECT_THROW(dropout_forward(TensorF(Shape{2}), 1.5, true, rng), ConfigError);
}

TEST(Softmax, UniformLogits) {
  const TensorD logits(Shape{1, 2}, 0.0);
  const TensorD onehot = TensorD::from(Shape{1, 2}, {0, 1});
  const auto r = softmax_cross_entropy(logits, onehot);
  EXPECT_DOUBLE_EQ(r.probs[0], 0.5);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
}

TEST(Softmax, LogThreeGivesQuarterSplit) {
  const TensorD p = softmax(TensorD::from(Shape{1, 2}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndLargeLogitsAreStable) {
  const auto logits = oracle::random_tensor<double>(Shape{16, 2}, 3, -500, 500);
  const TensorD p = softmax(logits);
  for (std::size_t r = 0; r < 16; ++r) EXPECT_NEAR(p[2 * r] + p[2 * r + 1], 1.0, 1e-12);
}

TEST(Softmax, ConfidentCorrectPredictionHasTinyLoss) {
  const auto r = softmax_cross_entropy(TensorD::from(Shape{1, 2}, {0, 20}), TensorD::from(Shape{1, 2}, {0, 1}));
  EXPECT_LT(r.loss, 1e-6);
}

TEST(Softmax, FusedGradientMatchesFiniteDifferences) {
  const auto logits = oracle::random_tensor<double>(Shape{4, 2}, 8, -2, 2);
  const TensorD onehot = TensorD::from(Shape{4, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
  const auto r = softmax_cross_entropy(logits, onehot);
  const TensorD g = softmax_cross_entropy_backward(r.probs, onehot);
  const auto num = oracle::numeric_grad(
      [&](const TensorD& l) {
        double loss = 0;
        for (std::size_t n = 0; n < 4; ++n) {
          const double a = l[2 * n], b = l[2 * n + 1];
          const double m = std::max(a, b);
          const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
          loss += lse - (onehot[2 * n] == 1 ? a : b);
        }
        return loss / 4;
      },
      logits);
  EXPECT_LT(oracle::max_rel_error(g, num), 1e-5);
}

TEST(Softmax, LabelsMustBeOneHot) {
  EXPECT_THROW(validate_onehot(TensorD::from(Shape{1, 2}, {1, 1})), DataError);
  EXPECT_THROW(validate_onehot(TensorD::from(Shape{1, 2}, {0.5, 0.5})), DataError);
  EXPECT_NO_THROW(validate_onehot(TensorD::from(Shape{2, 2}, {1, 0, 0, 1})));
}
