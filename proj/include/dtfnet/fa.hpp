#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "dtfnet/autograd.hpp"
#include "dtfnet/error.hpp"
#include "dtfnet/parallel.hpp"
#include "dtfnet/tensor.hpp"

namespace dtfnet {

// Post-softmax inter-frame attention weights, k^2 x T x H x W per sample
// (stored batched as N x k^2 x T x H x W). At every (t, x, y) the in-bounds
// weights are non-negative and sum to 1; out-of-border entries are exactly 0.
struct CorrelationMap {
  Tensor weights;
  std::size_t k = 0;
};

namespace ops {

// 0/1 validity of each k x k offset at each spatial position: H x W x k^2.
inline Tensor neighbor_mask(std::size_t H, std::size_t W, std::size_t k) {
  const std::size_t K2 = k * k;
  const int r = static_cast<int>(k) / 2;
  Tensor mask(Shape{H, W, K2});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t j = 0; j < K2; ++j) {
        const int yy = static_cast<int>(y) + static_cast<int>(j / k) - r;
        const int xx = static_cast<int>(x) + static_cast<int>(j % k) - r;
        mask.at({y, x, j}) =
            (yy >= 0 && yy < static_cast<int>(H) && xx >= 0 &&
             xx < static_cast<int>(W))
                ? 1.0
                : 0.0;
      }
  return mask;
}

// Keys of the next frame: out[n,c,t,y,x,j] = x[n,c,t+1,y+dy_j,x+dx_j], zero
// where the neighbor leaves the clip (t = T-1) or the spatial border.
inline Var gather_frame_neighbors(Tape& t, Var x, std::size_t k) {
  if (k % 2 == 0 || k == 0) throw EvenKernel("gather_frame_neighbors: k must be odd");
  const Tensor& xv = t.val(x);
  if (xv.rank() != 5)
    throw ShapeMismatch("gather_frame_neighbors: expected N x C x T x H x W");
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), H = xv.dim(3),
                    W = xv.dim(4);
  const std::size_t K2 = k * k;
  const int r = static_cast<int>(k) / 2;
  Tensor out(Shape{N, C, T, H, W, K2});
  const double* xp = xv.data();
  double* op = out.data();
  parallel_for(N * C * T, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t job = lo; job < hi; ++job) {
      const std::size_t tt = job % T;
      if (tt + 1 >= T) continue;  // zero-filled already
      const double* next = xp + (job + 1) * H * W;
      double* dst = op + job * H * W * K2;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x2 = 0; x2 < W; ++x2) {
          double* cell = dst + (y * W + x2) * K2;
          for (std::size_t j = 0; j < K2; ++j) {
            const int yy = static_cast<int>(y) + static_cast<int>(j / k) - r;
            const int xx = static_cast<int>(x2) + static_cast<int>(j % k) - r;
            if (yy < 0 || yy >= static_cast<int>(H) || xx < 0 ||
                xx >= static_cast<int>(W))
              continue;
            cell[j] = next[yy * W + xx];
          }
        }
    }
  });
  return t.make(std::move(out), {x.id},
                [x, N, C, T, H, W, K2, k, r](Tape& tp, Var self) {
                  const Tensor& g = tp.grad(self);
                  const double* gp = g.data();
                  Tensor& dx = tp.gbuf(x);
                  double* dp = dx.data();
                  parallel_for(N * C * T, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t job = lo; job < hi; ++job) {
                      const std::size_t tt = job % T;
                      if (tt == 0) continue;  // frame 0 is never a key
                      // x frame `tt` was gathered into output frame tt-1.
                      const double* gframe = gp + (job - 1) * H * W * K2;
                      double* dframe = dp + job * H * W;
                      for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t x2 = 0; x2 < W; ++x2) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < K2; ++j) {
                            const int ys = static_cast<int>(y) -
                                           (static_cast<int>(j / k) - r);
                            const int xs = static_cast<int>(x2) -
                                           (static_cast<int>(j % k) - r);
                            if (ys < 0 || ys >= static_cast<int>(H) ||
                                xs < 0 || xs >= static_cast<int>(W))
                              continue;
                            acc += gframe[(static_cast<std::size_t>(ys) * W +
                                           static_cast<std::size_t>(xs)) *
                                              K2 +
                                          j];
                          }
                          dframe[y * W + x2] += acc;
                        }
                    }
                  });
                });
}

// Raw attention scores s[n,t,y,x,j] = sum_c q[n,c,t,y,x] keys[n,c,t,y,x,j],
// scaled by 1/sqrt(C).
inline Var neighbor_scores(Tape& t, Var q, Var keys) {
  const Tensor& qv = t.val(q);
  const Tensor& kv = t.val(keys);
  if (qv.rank() != 5 || kv.rank() != 6)
    throw ShapeMismatch("neighbor_scores: bad ranks");
  const std::size_t N = qv.dim(0), C = qv.dim(1), T = qv.dim(2), H = qv.dim(3),
                    W = qv.dim(4), K2 = kv.dim(5);
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  const std::size_t P = T * H * W;  // positions per sample
  Tensor out(Shape{N, T, H, W, K2});
  const double* qp = qv.data();
  const double* kp = kv.data();
  double* op = out.data();
  parallel_for(N, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t n = lo; n < hi; ++n) {
      double* on = op + n * P * K2;
      for (std::size_t c = 0; c < C; ++c) {
        const double* qn = qp + (n * C + c) * P;
        const double* kn = kp + (n * C + c) * P * K2;
        for (std::size_t pidx = 0; pidx < P; ++pidx) {
          const double qval = qn[pidx];
          const double* krow = kn + pidx * K2;
          double* orow = on + pidx * K2;
          for (std::size_t j = 0; j < K2; ++j) orow[j] += qval * krow[j];
        }
      }
      for (std::size_t i = 0; i < P * K2; ++i) on[i] *= scale;
    }
  });
  return t.make(
      std::move(out), {q.id, keys.id},
      [q, keys, N, C, P, K2, scale](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const double* gp = g.data();
        if (tp.wants(q)) {
          Tensor& dq = tp.gbuf(q);
          const double* kp = tp.val(keys).data();
          double* dp = dq.data();
          parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t job = lo; job < hi; ++job) {
              const std::size_t n = job / C;
              const double* gn = gp + n * P * K2;
              const double* kn = kp + job * P * K2;
              double* dn = dp + job * P;
              for (std::size_t pidx = 0; pidx < P; ++pidx) {
                const double* grow = gn + pidx * K2;
                const double* krow = kn + pidx * K2;
                double acc = 0.0;
                for (std::size_t j = 0; j < K2; ++j) acc += grow[j] * krow[j];
                dn[pidx] += acc * scale;
              }
            }
          });
        }
        if (tp.wants(keys)) {
          Tensor& dk = tp.gbuf(keys);
          const double* qp = tp.val(q).data();
          double* dp = dk.data();
          parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t job = lo; job < hi; ++job) {
              const std::size_t n = job / C;
              const double* gn = gp + n * P * K2;
              const double* qn = qp + job * P;
              double* dn = dp + job * P * K2;
              for (std::size_t pidx = 0; pidx < P; ++pidx) {
                const double qval = qn[pidx] * scale;
                const double* grow = gn + pidx * K2;
                double* drow = dn + pidx * K2;
                for (std::size_t j = 0; j < K2; ++j)
                  drow[j] += qval * grow[j];
              }
            }
          });
        }
      });
}

// Softmax over the trailing k^2 axis restricted to in-bounds positions;
// masked entries are exactly 0. With all-zero scores (the final frame) the
// result is uniform over the in-bounds positions.
inline Var masked_softmax(Tape& t, Var scores, const Tensor& mask) {
  const Tensor& sv = t.val(scores);
  if (sv.rank() != 5) throw ShapeMismatch("masked_softmax: bad rank");
  const std::size_t N = sv.dim(0), T = sv.dim(1), H = sv.dim(2), W = sv.dim(3),
                    K2 = sv.dim(4);
  if (mask.shape() != Shape{H, W, K2})
    throw ShapeMismatch("masked_softmax: mask shape " + shape_str(mask.shape()));
  Tensor out(sv.shape());
  const double* sp = sv.data();
  const double* mp = mask.data();
  double* op = out.data();
  parallel_for(N * T, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t job = lo; job < hi; ++job) {
      const double* srow_base = sp + job * H * W * K2;
      double* orow_base = op + job * H * W * K2;
      for (std::size_t cell = 0; cell < H * W; ++cell) {
        const double* srow = srow_base + cell * K2;
        const double* mrow = mp + cell * K2;
        double* orow = orow_base + cell * K2;
        double mx = -1e300;
        for (std::size_t j = 0; j < K2; ++j)
          if (mrow[j] != 0.0 && srow[j] > mx) mx = srow[j];
        double z = 0.0;
        for (std::size_t j = 0; j < K2; ++j) {
          if (mrow[j] != 0.0) {
            orow[j] = std::exp(srow[j] - mx);
            z += orow[j];
          } else {
            orow[j] = 0.0;
          }
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < K2; ++j) orow[j] *= inv;
      }
    }
  });
  return t.make(std::move(out), {scores.id},
                [scores, N, T, H, W, K2](Tape& tp, Var self) {
                  const Tensor& g = tp.grad(self);
                  const Tensor& w = tp.val(self);
                  const double* gp = g.data();
                  const double* wp = w.data();
                  Tensor& ds = tp.gbuf(scores);
                  double* dp = ds.data();
                  parallel_for(N * T, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t job = lo; job < hi; ++job) {
                      const std::size_t base = job * H * W * K2;
                      for (std::size_t cell = 0; cell < H * W; ++cell) {
                        const double* grow = gp + base + cell * K2;
                        const double* wrow = wp + base + cell * K2;
                        double* drow = dp + base + cell * K2;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < K2; ++j)
                          dot += grow[j] * wrow[j];
                        for (std::size_t j = 0; j < K2; ++j)
                          drow[j] += wrow[j] * (grow[j] - dot);
                      }
                    }
                  });
                });
}

// Attention-weighted aggregation a[n,c,t,y,x] = sum_j w[n,t,y,x,j] *
// keys[n,c,t,y,x,j].
inline Var weighted_neighbor_sum(Tape& t, Var w, Var keys) {
  const Tensor& wv = t.val(w);
  const Tensor& kv = t.val(keys);
  if (wv.rank() != 5 || kv.rank() != 6)
    throw ShapeMismatch("weighted_neighbor_sum: bad ranks");
  const std::size_t N = kv.dim(0), C = kv.dim(1), T = kv.dim(2), H = kv.dim(3),
                    W = kv.dim(4), K2 = kv.dim(5);
  const std::size_t P = T * H * W;
  Tensor out(Shape{N, C, T, H, W});
  const double* wp = wv.data();
  const double* kp = kv.data();
  double* op = out.data();
  parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t job = lo; job < hi; ++job) {
      const std::size_t n = job / C;
      const double* wn = wp + n * P * K2;
      const double* kn = kp + job * P * K2;
      double* on = op + job * P;
      for (std::size_t pidx = 0; pidx < P; ++pidx) {
        const double* wrow = wn + pidx * K2;
        const double* krow = kn + pidx * K2;
        double acc = 0.0;
        for (std::size_t j = 0; j < K2; ++j) acc += wrow[j] * krow[j];
        on[pidx] = acc;
      }
    }
  });
  return t.make(
      std::move(out), {w.id, keys.id},
      [w, keys, N, C, P, K2](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const double* gp = g.data();
        if (tp.wants(w)) {
          Tensor& dw = tp.gbuf(w);
          const double* kp = tp.val(keys).data();
          double* dp = dw.data();
          parallel_for(N, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t n = lo; n < hi; ++n) {
              double* dn = dp + n * P * K2;
              for (std::size_t c = 0; c < C; ++c) {
                const double* gn = gp + (n * C + c) * P;
                const double* kn = kp + (n * C + c) * P * K2;
                for (std::size_t pidx = 0; pidx < P; ++pidx) {
                  const double gval = gn[pidx];
                  const double* krow = kn + pidx * K2;
                  double* drow = dn + pidx * K2;
                  for (std::size_t j = 0; j < K2; ++j)
                    drow[j] += gval * krow[j];
                }
              }
            }
          });
        }
        if (tp.wants(keys)) {
          Tensor& dk = tp.gbuf(keys);
          const double* wp2 = tp.val(w).data();
          double* dp = dk.data();
          parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t job = lo; job < hi; ++job) {
              const std::size_t n = job / C;
              const double* wn = wp2 + n * P * K2;
              const double* gn = gp + job * P;
              double* dn = dp + job * P * K2;
              for (std::size_t pidx = 0; pidx < P; ++pidx) {
                const double gval = gn[pidx];
                const double* wrow = wn + pidx * K2;
                double* drow = dn + pidx * K2;
                for (std::size_t j = 0; j < K2; ++j) drow[j] += gval * wrow[j];
              }
            }
          });
        }
      });
}

}  // namespace ops

namespace fa {

struct Aggregated {
  Var enhanced;     // N x C x T x H x W
  Var correlation;  // N x k^2 x T x H x W, post-softmax weights
};

// Inter-frame attention over the k x k neighborhood of the next frame.
// Queries are the per-location feature vectors, keys their spatial neighbors
// one frame ahead; the aggregated neighbor feature is added back onto the
// query. The final frame aggregates nothing and its correlation slice is
// uniform over in-bounds positions (its scores are all zero).
inline Aggregated frame_aggregate_var(Tape& t, Var f, std::size_t k) {
  if (k % 2 == 0 || k == 0) throw EvenKernel("frame_aggregate: k must be odd");
  const Tensor& fv = t.val(f);
  if (fv.rank() != 5)
    throw ShapeMismatch("frame_aggregate: expected N x C x T x H x W");
  const Tensor mask = ops::neighbor_mask(fv.dim(3), fv.dim(4), k);
  Var keys = ops::gather_frame_neighbors(t, f, k);
  Var scores = ops::neighbor_scores(t, f, keys);
  Var weights = ops::masked_softmax(t, scores, mask);
  Var agg = ops::weighted_neighbor_sum(t, weights, keys);
  Var enhanced = ops::add(t, f, agg);
  Var correlation = ops::permute(t, weights, {0, 4, 1, 2, 3});
  return {enhanced, correlation};
}

// Value-level form returning the enhanced map and the correlation feature.
inline std::pair<Tensor, CorrelationMap> frame_aggregate(const Tensor& f,
                                                         std::size_t k) {
  Tape t;
  Aggregated out = frame_aggregate_var(t, t.constant(f), k);
  return {t.val(out.enhanced), CorrelationMap{t.val(out.correlation), k}};
}

// Unnormalized correlation scores (before masking/softmax), exposed for the
// scale-behavior property.
inline Tensor raw_neighbor_scores(const Tensor& f, std::size_t k) {
  if (k % 2 == 0 || k == 0) throw EvenKernel("raw_neighbor_scores: k must be odd");
  Tape t;
  Var x = t.constant(f);
  Var keys = ops::gather_frame_neighbors(t, x, k);
  return t.val(ops::neighbor_scores(t, x, keys));
}

}  // namespace fa

}  // namespace dtfnet
