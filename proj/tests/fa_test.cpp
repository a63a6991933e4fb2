#include "dtfnet/fa.hpp"

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

TEST(FrameAggregate, EvenKernelThrows) {
  EXPECT_THROW(fa::frame_aggregate(rnd({1, 2, 3, 4, 4}, 1), 2), EvenKernel);
  EXPECT_THROW(fa::frame_aggregate(rnd({1, 2, 3, 4, 4}, 1), 0), EvenKernel);
}

TEST(FrameAggregate, RejectsNonVideoInput) {
  EXPECT_THROW(fa::frame_aggregate(rnd({2, 3, 4}, 2), 3), ShapeMismatch);
}

TEST(FrameAggregate, K1IdenticalFramesDoubleAllButLast) {
  // k=1: the single weight is 1; with all frames identical Y = 2F except the
  // final frame, which aggregates nothing.
  Rng rng(3);
  Tensor frame = oracle::random_tensor({2, 3, 1, 4, 4}, rng);
  const std::size_t T = 5;
  Tensor clip(Shape{2, 3, T, 4, 4});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < 16; ++i)
          clip.at({n, c, t, i / 4, i % 4}) = frame.at({n, c, 0, i / 4, i % 4});

  auto [enh, cor] = fa::frame_aggregate(clip, 1);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < 16; ++i) {
          const double v = clip.at({n, c, t, i / 4, i % 4});
          const double got = enh.at({n, c, t, i / 4, i % 4});
          if (t + 1 < T)
            EXPECT_NEAR(got, 2 * v, 1e-12);
          else
            EXPECT_DOUBLE_EQ(got, v);
        }
  for (std::size_t i = 0; i < cor.weights.numel(); ++i)
    EXPECT_DOUBLE_EQ(cor.weights[i], 1.0);
}

TEST(FrameAggregate, ConstantNextFrameAddsItsValue) {
  // If every key equals v, the convex combination is v no matter the weights.
  Rng rng(4);
  Tensor clip = oracle::random_tensor({1, 2, 2, 5, 5}, rng);
  const double v0 = 0.31, v1 = -1.2;
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      clip.at({0, 0, 1, y, x}) = v0;
      clip.at({0, 1, 1, y, x}) = v1;
    }
  auto [enh, cor] = fa::frame_aggregate(clip, 3);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      EXPECT_NEAR(enh.at({0, 0, 0, y, x}), clip.at({0, 0, 0, y, x}) + v0, 1e-12);
      EXPECT_NEAR(enh.at({0, 1, 0, y, x}), clip.at({0, 1, 0, y, x}) + v1, 1e-12);
    }
}

TEST(FrameAggregate, MatchesBruteForceOracle) {
  Tensor clip = rnd({1, 4, 3, 5, 5}, 7);
  auto [enh, cor] = fa::frame_aggregate(clip, 3);
  Tensor want_enh, want_cor;
  oracle::frame_aggregate(clip, 3, want_enh, want_cor);
  ASSERT_EQ(enh.shape(), want_enh.shape());
  ASSERT_EQ(cor.weights.shape(), want_cor.shape());
  for (std::size_t i = 0; i < enh.numel(); ++i)
    EXPECT_NEAR(enh[i], want_enh[i], 1e-10);
  for (std::size_t i = 0; i < cor.weights.numel(); ++i)
    EXPECT_NEAR(cor.weights[i], want_cor[i], 1e-10);
}

TEST(CorrelationMap, WeightsSumToOneMaskedExactlyZero) {
  Tensor clip = rnd({2, 3, 4, 4, 6}, 11);
  const std::size_t k = 3, K2 = 9;
  auto [enh, cor] = fa::frame_aggregate(clip, k);
  const Tensor mask = ops::neighbor_mask(4, 6, k);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 6; ++x) {
          double sum = 0.0;
          for (std::size_t j = 0; j < K2; ++j) {
            const double w = cor.weights.at({n, j, t, y, x});
            EXPECT_GE(w, 0.0);
            if (mask.at({y, x, j}) == 0.0) EXPECT_EQ(w, 0.0);
            sum += w;
          }
          EXPECT_NEAR(sum, 1.0, 1e-9);
        }
}

TEST(CorrelationMap, FinalFrameSliceIsUniformOverInBounds) {
  Tensor clip = rnd({1, 2, 3, 4, 4}, 13);
  auto [enh, cor] = fa::frame_aggregate(clip, 3);
  const Tensor mask = ops::neighbor_mask(4, 4, 3);
  const std::size_t t_last = 2;
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      double in_bounds = 0.0;
      for (std::size_t j = 0; j < 9; ++j) in_bounds += mask.at({y, x, j});
      for (std::size_t j = 0; j < 9; ++j) {
        const double w = cor.weights.at({0, j, t_last, y, x});
        if (mask.at({y, x, j}) != 0.0)
          EXPECT_NEAR(w, 1.0 / in_bounds, 1e-12);
        else
          EXPECT_EQ(w, 0.0);
      }
    }
}

TEST(FrameAggregate, ConvexCombinationBound) {
  Tensor clip = rnd({1, 3, 3, 5, 5}, 17);
  auto [enh, cor] = fa::frame_aggregate(clip, 3);
  // A = Y - Q must lie within [min, max] of the in-bounds keys per channel.
  const Tensor mask = ops::neighbor_mask(5, 5, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t + 1 < 3; ++t)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
          double lo = 1e300, hi = -1e300;
          for (std::size_t j = 0; j < 9; ++j) {
            if (mask.at({y, x, j}) == 0.0) continue;
            const std::size_t yy = y + j / 3 - 1;
            const std::size_t xx = x + j % 3 - 1;
            const double key = clip.at({0, c, t + 1, yy, xx});
            lo = std::min(lo, key);
            hi = std::max(hi, key);
          }
          const double a = enh.at({0, c, t, y, x}) - clip.at({0, c, t, y, x});
          EXPECT_GE(a, lo - 1e-12);
          EXPECT_LE(a, hi + 1e-12);
        }
}

TEST(FrameAggregate, TranslationEquivarianceOnInterior) {
  // Shift the whole clip by one pixel; interior outputs shift identically.
  const std::size_t H = 6, W = 6, k = 3;
  Tensor clip = rnd({1, 2, 3, H, W}, 19);
  Tensor shifted(clip.shape());
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t y = 0; y + 1 < H; ++y)
        for (std::size_t x = 0; x + 1 < W; ++x)
          shifted.at({0, c, t, y + 1, x + 1}) = clip.at({0, c, t, y, x});
  auto [enh, cor] = fa::frame_aggregate(clip, k);
  auto [enh_s, cor_s] = fa::frame_aggregate(shifted, k);
  // Locations whose full k x k neighborhood stays in bounds both before and
  // after the shift.
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t y = 1; y + 2 < H; ++y)
        for (std::size_t x = 1; x + 2 < W; ++x)
          EXPECT_NEAR(enh_s.at({0, c, t, y + 1, x + 1}),
                      enh.at({0, c, t, y, x}), 1e-10);
}

TEST(FrameAggregate, ScoreScaleIsQuadraticAndArgmaxInvariant) {
  const double alpha = 3.0;
  Tensor clip = rnd({1, 3, 3, 5, 5}, 23);
  Tensor scaled = clip;
  for (std::size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= alpha;
  Tensor s1 = fa::raw_neighbor_scores(clip, 3);
  Tensor s2 = fa::raw_neighbor_scores(scaled, 3);
  ASSERT_EQ(s1.shape(), s2.shape());
  const Tensor mask = ops::neighbor_mask(5, 5, 3);
  const std::size_t cells = 3 * 5 * 5;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    std::size_t arg1 = 0, arg2 = 0;
    double best1 = -1e300, best2 = -1e300;
    for (std::size_t j = 0; j < 9; ++j) {
      const double a = s1[cell * 9 + j];
      const double b = s2[cell * 9 + j];
      EXPECT_NEAR(b, alpha * alpha * a, 1e-9);
      const std::size_t y = (cell % 25) / 5, x = cell % 5;
      if (mask.at({y, x, j}) == 0.0) continue;
      if (a > best1) { best1 = a; arg1 = j; }
      if (b > best2) { best2 = b; arg2 = j; }
    }
    EXPECT_EQ(arg1, arg2);
  }
}
