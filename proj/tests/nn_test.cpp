#include "dtfnet/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "dtfnet/rng.hpp"
#include "oracles.hpp"

using namespace dtfnet;

namespace {

Tensor rnd(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor(std::move(s), rng);
}

}  // namespace

TEST(Conv2d3x3, CenterOneKernelIsIdentity) {
  Tensor x = rnd({1, 2, 3, 4, 4}, 1);
  Tensor w(Shape{2, 2, 3, 3});
  w.at({0, 0, 1, 1}) = 1.0;
  w.at({1, 1, 1, 1}) = 1.0;
  Tensor b(Shape{2});
  Tensor y = nn::conv2d_3x3(x, w, b);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d3x3, ZeroWeightGivesConstantBias) {
  Tensor x = rnd({1, 1, 2, 3, 3}, 2);
  Tensor w(Shape{2, 1, 3, 3});
  Tensor b = tensor_create({2}, {0.25, -1.5});
  Tensor y = nn::conv2d_3x3(x, w, b);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < 9; ++i) {
      EXPECT_EQ(y.data()[t * 9 + i], 0.25);
      EXPECT_EQ(y.data()[(2 + t) * 9 + i], -1.5);
    }
}

TEST(Conv2d3x3, MatchesNaiveLoopOracle) {
  Tensor x = rnd({1, 2, 2, 4, 4}, 3);
  Tensor w = rnd({3, 2, 3, 3}, 4);
  Tensor b = rnd({3}, 5);
  Tensor got = nn::conv2d_3x3(x, w, b);
  Tensor want = oracle::conv2d_3x3(x, w, b);
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.numel(); ++i)
    EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Conv2d3x3, ShapeMismatchThrows) {
  Tensor x = rnd({1, 2, 2, 4, 4}, 6);
  EXPECT_THROW(nn::conv2d_3x3(x, rnd({3, 1, 3, 3}, 7), rnd({3}, 8)),
               ShapeMismatch);
  EXPECT_THROW(nn::conv2d_3x3(x, rnd({3, 2, 3, 3}, 7), rnd({2}, 8)),
               ShapeMismatch);
}

TEST(Conv1dTemporal, CenterTapIsIdentity) {
  Tensor x = rnd({1, 2, 4, 2, 2}, 11);
  Tensor w = tensor_create({2, 3}, {0, 1, 0, 0, 1, 0});
  Tensor b(Shape{2});
  Tensor y = nn::conv1d_temporal(x, w, b);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv1dTemporal, LeftTapShiftsWithZeroPad) {
  // w = [1,0,0] on T=3 signal [a,b,c] -> [0,a,b].
  Tensor x = tensor_create({1, 1, 3, 1, 1}, {5, 7, 9});
  Tensor w = tensor_create({1, 3}, {1, 0, 0});
  Tensor b(Shape{1});
  Tensor y = nn::conv1d_temporal(x, w, b);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 5.0);
  EXPECT_EQ(y[2], 7.0);
}

TEST(Conv1dTemporal, MatchesNaiveLoopOracle) {
  Tensor x = rnd({2, 3, 5, 2, 3}, 12);
  Tensor w = rnd({3, 3}, 13);
  Tensor b = rnd({3}, 14);
  Tensor got = nn::conv1d_temporal(x, w, b);
  Tensor want = oracle::conv1d_temporal(x, w, b);
  for (std::size_t i = 0; i < got.numel(); ++i)
    EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Linear, IdentityAndZeroInput) {
  Tensor id = tensor_create({2, 2}, {1, 0, 0, 1});
  Tensor b = tensor_create({2}, {0, 0});
  Tensor x = rnd({3, 2}, 21);
  Tensor y = nn::linear(x, id, b);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);

  Tensor zeros(Shape{3, 2});
  Tensor bias = tensor_create({2}, {0.5, -2.0});
  Tensor rows = nn::linear(zeros, rnd({2, 2}, 22), bias);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rows[i * 2 + 0], 0.5);
    EXPECT_EQ(rows[i * 2 + 1], -2.0);
  }
}

TEST(Linear, MatchesMatmulReference) {
  Tensor x = rnd({4, 6}, 23);
  Tensor w = rnd({3, 6}, 24);
  Tensor b = rnd({3}, 25);
  Tensor got = nn::linear(x, w, b);
  // x . w^T + b via the tensor module.
  Tensor wt = tensor_permute(w, {1, 0});
  Tensor mm = tensor_matmul(x, wt);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < 3; ++o)
      EXPECT_NEAR(got[i * 3 + o], mm[i * 3 + o] + b[o], 1e-12);
}

TEST(RmsChannelNorm, ConstantChannel) {
  const double c = 0.8;
  Tensor x = Tensor::full({1, 1, 2, 2, 2}, c);
  Tensor gain = Tensor::full({1}, 1.0);
  Tensor y = nn::rms_channel_norm(x, gain);
  const double want = c / std::sqrt(c * c + 1e-6);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], want, 1e-12);
}

TEST(RmsChannelNorm, ZeroInputStaysZero) {
  Tensor x(Shape{1, 2, 2, 2, 2});
  Tensor gain = Tensor::full({2}, 1.0);
  Tensor y = nn::rms_channel_norm(x, gain);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(RmsChannelNorm, ScaleInvariantForLargeInputs) {
  Rng rng(31);
  Tensor x = oracle::random_tensor({1, 2, 3, 3, 3}, rng, 0.5, 2.0);
  Tensor x10 = x;
  for (std::size_t i = 0; i < x10.numel(); ++i) x10[i] *= 10.0;
  Tensor gain = Tensor::full({2}, 1.3);
  Tensor y = nn::rms_channel_norm(x, gain);
  Tensor y10 = nn::rms_channel_norm(x10, gain);
  for (std::size_t i = 0; i < y.numel(); ++i)
    EXPECT_LT(std::fabs(y10[i] - y[i]) / std::max(1e-9, std::fabs(y[i])), 1e-6);
}

TEST(GlobalAvgPool, ConstantAndOneHot) {
  Tensor x = Tensor::full({1, 1, 2, 2, 2}, 3.25);
  Tensor y = nn::global_avg_pool(x);
  EXPECT_DOUBLE_EQ(y[0], 3.25);

  Tensor onehot(Shape{1, 1, 2, 2, 2});
  onehot[5] = 4.0;
  Tensor p = nn::global_avg_pool(onehot);
  EXPECT_DOUBLE_EQ(p[0], 4.0 / 8.0);
}

TEST(GlobalAvgPool, MatchesNaiveMean) {
  Tensor x = rnd({2, 3, 2, 3, 3}, 41);
  Tensor y = nn::global_avg_pool(x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t yy = 0; yy < 3; ++yy)
          for (std::size_t xx = 0; xx < 3; ++xx)
            acc += x.at({n, c, t, yy, xx});
      EXPECT_NEAR(y[n * 3 + c], acc / 18.0, 1e-12);
    }
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLnK) {
  Tensor logits = Tensor::full({2, 4}, 0.37);
  const double loss = nn::softmax_cross_entropy(logits, {0, 3});
  EXPECT_NEAR(loss, std::log(4.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, LargeMarginDrivesLossToZero) {
  Tensor logits(Shape{1, 3});
  logits[1] = 50.0;
  const double loss = nn::softmax_cross_entropy(logits, {1});
  EXPECT_LT(loss, 1e-12);
  EXPECT_GE(loss, 0.0);
}

TEST(SoftmaxCrossEntropy, MatchesDirectFormula) {
  Tensor logits = rnd({3, 5}, 51);
  const std::vector<int> labels{4, 0, 2};
  const double got = nn::softmax_cross_entropy(logits, labels);
  long double acc = 0.0L;
  for (std::size_t i = 0; i < 3; ++i) {
    long double z = 0.0L;
    for (std::size_t k = 0; k < 5; ++k) z += expl(logits[i * 5 + k]);
    acc += -(static_cast<long double>(logits[i * 5 + labels[i]]) - logl(z));
  }
  EXPECT_NEAR(got, static_cast<double>(acc / 3.0L), 1e-10);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeThrows) {
  Tensor logits = rnd({2, 3}, 52);
  EXPECT_THROW(nn::softmax_cross_entropy(logits, {0, 3}), LabelOutOfRange);
  EXPECT_THROW(nn::softmax_cross_entropy(logits, {-1, 1}), LabelOutOfRange);
}

TEST(ParamStore, NamesUniqueAndSorted) {
  ParamStore s;
  s.add("b.weight", Tensor(Shape{2}));
  s.add("a.weight", Tensor(Shape{3}));
  EXPECT_THROW(s.add("a.weight", Tensor(Shape{1})), InvalidConfig);
  EXPECT_EQ(s.items().begin()->first, "a.weight");
  EXPECT_EQ(s.total_elements(), 5u);
  EXPECT_THROW(s.at("missing"), InvalidConfig);
}
