#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dtfnet/autograd.hpp"
#include "dtfnet/error.hpp"
#include "dtfnet/parallel.hpp"
#include "dtfnet/tensor.hpp"

namespace dtfnet {

// Named parameter set. Iteration is sorted by name; shapes are frozen at
// insertion. Name scheme: "block{i}.{layer}.{weight|bias}".
class ParamStore {
 public:
  void add(const std::string& name, Tensor value) {
    if (params_.count(name))
      throw InvalidConfig("ParamStore: duplicate parameter " + name);
    params_.emplace(name, std::move(value));
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw InvalidConfig("ParamStore: missing parameter " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  std::map<std::string, Tensor>& items() { return params_; }
  const std::map<std::string, Tensor>& items() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

namespace ops {

namespace detail {

inline void check_video(const Tensor& x, const char* where) {
  if (x.rank() != 5)
    throw ShapeMismatch(std::string(where) + ": expected N x C x T x H x W, got " +
                        shape_str(x.shape()));
}

}  // namespace ops detail

// Per-frame 3x3 cross-correlation, padding 1. `stride` subsamples the spatial
// grid (the between-stage downsampling path); the public module surface uses
// stride 1. The stride-1 path lowers each frame to an im2col buffer and runs
// axpy-form GEMM loops; gradient reductions use a fixed chunk count so
// results are independent of the worker count.
namespace detail {

// col[(ci*9 + ky*3 + kx) * HW + (y*W + x)] = frame[ci, y+ky-1, x+kx-1],
// zero outside the border.
inline void im2col_3x3(const double* base, std::size_t ci_stride,
                       std::size_t Ci, std::size_t H, std::size_t W,
                       double* col) {
  const std::size_t HW = H * W;
  double* crow = col;
  for (std::size_t ci = 0; ci < Ci; ++ci) {
    const double* f = base + ci * ci_stride;
    for (int ky = 0; ky < 3; ++ky) {
      const int ys = ky - 1;
      for (int kx = 0; kx < 3; ++kx) {
        const int xs = kx - 1;
        for (std::size_t y = 0; y < H; ++y) {
          double* dst = crow + y * W;
          const int yy = static_cast<int>(y) + ys;
          if (yy < 0 || yy >= static_cast<int>(H)) {
            for (std::size_t i = 0; i < W; ++i) dst[i] = 0.0;
            continue;
          }
          const double* src = f + yy * W + xs;
          const std::size_t x0 = xs < 0 ? 1 : 0;
          const std::size_t x1 = xs > 0 ? W - 1 : W;
          if (xs < 0) dst[0] = 0.0;
          if (xs > 0) dst[W - 1] = 0.0;
          for (std::size_t i = x0; i < x1; ++i) dst[i] = src[i];
        }
        crow += HW;
      }
    }
  }
}

}  // namespace detail

inline Var conv2d(Tape& t, Var x, Var w, Var b, std::size_t stride = 1) {
  detail::check_video(t.val(x), "conv2d");
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  const Tensor& bv = t.val(b);
  const std::size_t N = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2),
                    H = xv.dim(3), W = xv.dim(4);
  if (wv.rank() != 4 || wv.dim(1) != Ci || wv.dim(2) != 3 || wv.dim(3) != 3 ||
      bv.rank() != 1 || bv.dim(0) != wv.dim(0))
    throw ShapeMismatch("conv2d: weight " + shape_str(wv.shape()) + " bias " +
                        shape_str(bv.shape()) + " for input " +
                        shape_str(xv.shape()));
  const std::size_t Co = wv.dim(0);
  const std::size_t s = stride;
  const std::size_t Ho = (H - 1) / s + 1, Wo = (W - 1) / s + 1;
  const std::size_t HW = H * W;

  Tensor out(Shape{N, Co, T, Ho, Wo});
  const double* xp = xv.data();
  const double* wp = wv.data();
  double* op = out.data();
  if (s == 1) {
    const std::size_t D = Ci * 9;
    parallel_for(N * T, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> col(D * HW);
      for (std::size_t job = lo; job < hi; ++job) {
        const std::size_t tt = job % T;
        const std::size_t n = job / T;
        detail::im2col_3x3(xp + (n * Ci * T + tt) * HW, T * HW, Ci, H, W,
                           col.data());
        for (std::size_t co = 0; co < Co; ++co) {
          double* orow = op + ((n * Co + co) * T + tt) * HW;
          const double bias = bv[co];
          for (std::size_t j = 0; j < HW; ++j) orow[j] = bias;
          const double* wrow = wp + co * D;
          for (std::size_t d = 0; d < D; ++d) {
            const double wgt = wrow[d];
            const double* crow = col.data() + d * HW;
            for (std::size_t j = 0; j < HW; ++j) orow[j] += wgt * crow[j];
          }
        }
      }
    });
  } else {
    parallel_for(N * Co * T, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t job = lo; job < hi; ++job) {
        const std::size_t tt = job % T;
        const std::size_t co = (job / T) % Co;
        const std::size_t n = job / (T * Co);
        double* orow = op + job * Ho * Wo;
        const double bias = bv[co];
        for (std::size_t i = 0; i < Ho * Wo; ++i) orow[i] = bias;
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const double* xframe = xp + ((n * Ci + ci) * T + tt) * HW;
          const double* wk = wp + (co * Ci + ci) * 9;
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t yo = 0; yo < Ho; ++yo) {
              const long y = static_cast<long>(s * yo + ky) - 1;
              if (y < 0 || y >= static_cast<long>(H)) continue;
              const double* xrow = xframe + y * W;
              double* odst = orow + yo * Wo;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const double wgt = wk[ky * 3 + kx];
                const std::size_t xlo = (kx == 0) ? 1 : 0;
                const std::size_t xhi = std::min(Wo, (W - kx) / s + 1);
                const double* src = xrow + kx - 1;
                for (std::size_t xo = xlo; xo < xhi; ++xo)
                  odst[xo] += wgt * src[s * xo];
              }
            }
          }
        }
      }
    });
  }

  return t.make(
      std::move(out), {x.id, w.id, b.id},
      [x, w, b, N, Ci, Co, T, H, W, Ho, Wo, HW, s](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const double* gp = g.data();
        if (tp.wants(x)) {
          Tensor& dx = tp.gbuf(x);
          const double* wp = tp.val(w).data();
          double* dp = dx.data();
          if (s == 1) {
            // dx frame = GEMM of the transposed, spatially flipped kernel
            // with the im2col of the output gradient.
            const std::size_t D = Co * 9;
            std::vector<double> wflip(Ci * D);
            for (std::size_t ci = 0; ci < Ci; ++ci)
              for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t ky = 0; ky < 3; ++ky)
                  for (std::size_t kx = 0; kx < 3; ++kx)
                    wflip[ci * D + co * 9 + ky * 3 + kx] =
                        wp[(co * Ci + ci) * 9 + (2 - ky) * 3 + (2 - kx)];
            const double* wf = wflip.data();
            parallel_for(N * T, [&](std::size_t lo, std::size_t hi) {
              std::vector<double> gcol(D * HW);
              for (std::size_t job = lo; job < hi; ++job) {
                const std::size_t tt = job % T;
                const std::size_t n = job / T;
                detail::im2col_3x3(gp + (n * Co * T + tt) * HW, T * HW, Co, H,
                                   W, gcol.data());
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                  double* drow = dp + ((n * Ci + ci) * T + tt) * HW;
                  const double* wrow = wf + ci * D;
                  for (std::size_t d = 0; d < D; ++d) {
                    const double wgt = wrow[d];
                    const double* crow = gcol.data() + d * HW;
                    for (std::size_t j = 0; j < HW; ++j) drow[j] += wgt * crow[j];
                  }
                }
              }
            });
          } else {
            parallel_for(N * Ci * T, [&](std::size_t lo, std::size_t hi) {
              for (std::size_t job = lo; job < hi; ++job) {
                const std::size_t tt = job % T;
                const std::size_t ci = (job / T) % Ci;
                const std::size_t n = job / (T * Ci);
                double* dframe = dp + job * HW;
                for (std::size_t co = 0; co < Co; ++co) {
                  const double* gframe = gp + ((n * Co + co) * T + tt) * Ho * Wo;
                  const double* wk = wp + (co * Ci + ci) * 9;
                  for (std::size_t ky = 0; ky < 3; ++ky) {
                    for (std::size_t yo = 0; yo < Ho; ++yo) {
                      const long y = static_cast<long>(s * yo + ky) - 1;
                      if (y < 0 || y >= static_cast<long>(H)) continue;
                      double* drow = dframe + y * W;
                      const double* grow = gframe + yo * Wo;
                      for (std::size_t kx = 0; kx < 3; ++kx) {
                        const double wgt = wk[ky * 3 + kx];
                        const std::size_t xlo = (kx == 0) ? 1 : 0;
                        const std::size_t xhi = std::min(Wo, (W - kx) / s + 1);
                        double* dst = drow + kx - 1;
                        for (std::size_t xo = xlo; xo < xhi; ++xo)
                          dst[s * xo] += wgt * grow[xo];
                      }
                    }
                  }
                }
              }
            });
          }
        }
        if (tp.wants(w)) {
          Tensor& dw = tp.gbuf(w);
          const double* xp = tp.val(x).data();
          double* dp = dw.data();
          if (s == 1) {
            // Rank-1 accumulation over frames into a fixed number of partial
            // buffers, reduced in order.
            const std::size_t D = Ci * 9;
            const std::size_t jobs = N * T;
            const std::size_t nchunks = std::min<std::size_t>(16, jobs);
            const std::size_t chunk_len = (jobs + nchunks - 1) / nchunks;
            std::vector<double> partial(nchunks * Co * D, 0.0);
            parallel_for(nchunks, [&](std::size_t clo, std::size_t chi) {
              std::vector<double> col(D * HW);
              std::vector<double> colT(HW * D);
              for (std::size_t chunk = clo; chunk < chi; ++chunk) {
                double* acc = partial.data() + chunk * Co * D;
                const std::size_t jlo = chunk * chunk_len;
                const std::size_t jhi = std::min(jobs, jlo + chunk_len);
                for (std::size_t job = jlo; job < jhi; ++job) {
                  const std::size_t tt = job % T;
                  const std::size_t n = job / T;
                  detail::im2col_3x3(xp + (n * Ci * T + tt) * HW, T * HW, Ci,
                                     H, W, col.data());
                  for (std::size_t d = 0; d < D; ++d)
                    for (std::size_t j = 0; j < HW; ++j)
                      colT[j * D + d] = col[d * HW + j];
                  for (std::size_t co = 0; co < Co; ++co) {
                    const double* grow = gp + ((n * Co + co) * T + tt) * HW;
                    double* arow = acc + co * D;
                    for (std::size_t j = 0; j < HW; ++j) {
                      const double gv = grow[j];
                      const double* crow = colT.data() + j * D;
                      for (std::size_t d = 0; d < D; ++d)
                        arow[d] += gv * crow[d];
                    }
                  }
                }
              }
            });
            for (std::size_t chunk = 0; chunk < nchunks; ++chunk) {
              const double* acc = partial.data() + chunk * Co * D;
              for (std::size_t i = 0; i < Co * D; ++i) dp[i] += acc[i];
            }
          } else {
            parallel_for(Co * Ci, [&](std::size_t lo, std::size_t hi) {
              for (std::size_t job = lo; job < hi; ++job) {
                const std::size_t ci = job % Ci;
                const std::size_t co = job / Ci;
                double acc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
                for (std::size_t n = 0; n < N; ++n) {
                  for (std::size_t tt = 0; tt < T; ++tt) {
                    const double* xframe = xp + ((n * Ci + ci) * T + tt) * HW;
                    const double* gframe =
                        gp + ((n * Co + co) * T + tt) * Ho * Wo;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                      for (std::size_t yo = 0; yo < Ho; ++yo) {
                        const long y = static_cast<long>(s * yo + ky) - 1;
                        if (y < 0 || y >= static_cast<long>(H)) continue;
                        const double* xrow = xframe + y * W;
                        const double* grow = gframe + yo * Wo;
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                          const std::size_t xlo = (kx == 0) ? 1 : 0;
                          const std::size_t xhi =
                              std::min(Wo, (W - kx) / s + 1);
                          const double* src = xrow + kx - 1;
                          double a = 0.0;
                          for (std::size_t xo = xlo; xo < xhi; ++xo)
                            a += grow[xo] * src[s * xo];
                          acc[ky * 3 + kx] += a;
                        }
                      }
                    }
                  }
                }
                double* wrow = dp + (co * Ci + ci) * 9;
                for (int i = 0; i < 9; ++i) wrow[i] += acc[i];
              }
            });
          }
        }
        if (tp.wants(b)) {
          Tensor& db = tp.gbuf(b);
          for (std::size_t co = 0; co < Co; ++co) {
            double acc = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
              const double* gframe = gp + (n * Co + co) * T * Ho * Wo;
              for (std::size_t i = 0; i < T * Ho * Wo; ++i) acc += gframe[i];
            }
            db[co] += acc;
          }
        }
      });
}

// Depthwise temporal 3-tap cross-correlation, zero padding along T.
inline Var conv1d_temporal(Tape& t, Var x, Var w, Var b) {
  detail::check_video(t.val(x), "conv1d_temporal");
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  const Tensor& bv = t.val(b);
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), H = xv.dim(3),
                    W = xv.dim(4);
  if (wv.rank() != 2 || wv.dim(0) != C || wv.dim(1) != 3 || bv.rank() != 1 ||
      bv.dim(0) != C)
    throw ShapeMismatch("conv1d_temporal: weight " + shape_str(wv.shape()) +
                        " bias " + shape_str(bv.shape()) + " for input " +
                        shape_str(xv.shape()));
  const std::size_t HW = H * W;
  Tensor out(xv.shape());
  const double* xp = xv.data();
  double* op = out.data();
  parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t job = lo; job < hi; ++job) {
      const std::size_t c = job % C;
      const double* xc = xp + job * T * HW;
      double* oc = op + job * T * HW;
      const double w0 = wv[c * 3 + 0], w1 = wv[c * 3 + 1], w2 = wv[c * 3 + 2];
      const double bias = bv[c];
      for (std::size_t tt = 0; tt < T; ++tt) {
        const double* prev = tt > 0 ? xc + (tt - 1) * HW : nullptr;
        const double* cur = xc + tt * HW;
        const double* next = tt + 1 < T ? xc + (tt + 1) * HW : nullptr;
        double* orow = oc + tt * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          double acc = bias + w1 * cur[i];
          if (prev) acc += w0 * prev[i];
          if (next) acc += w2 * next[i];
          orow[i] = acc;
        }
      }
    }
  });
  return t.make(
      std::move(out), {x.id, w.id, b.id},
      [x, w, b, N, C, T, HW](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const double* gp = g.data();
        if (tp.wants(x)) {
          Tensor& dx = tp.gbuf(x);
          const Tensor& wv = tp.val(w);
          double* dp = dx.data();
          parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t job = lo; job < hi; ++job) {
              const std::size_t c = job % C;
              const double* gc = gp + job * T * HW;
              double* dc = dp + job * T * HW;
              const double w0 = wv[c * 3 + 0], w1 = wv[c * 3 + 1],
                           w2 = wv[c * 3 + 2];
              for (std::size_t tt = 0; tt < T; ++tt) {
                // out[t'] consumed x[t] with tap t - t' + 1.
                const double* gnext = tt + 1 <= T - 1 ? gc + (tt + 1) * HW : nullptr;
                const double* gcur = gc + tt * HW;
                const double* gprev = tt > 0 ? gc + (tt - 1) * HW : nullptr;
                double* drow = dc + tt * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                  double acc = w1 * gcur[i];
                  if (gnext) acc += w0 * gnext[i];
                  if (gprev) acc += w2 * gprev[i];
                  drow[i] += acc;
                }
              }
            }
          });
        }
        if (tp.wants(w)) {
          Tensor& dw = tp.gbuf(w);
          const double* xp = tp.val(x).data();
          double* dp = dw.data();
          parallel_for(C, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t c = lo; c < hi; ++c) {
              double a0 = 0, a1 = 0, a2 = 0;
              for (std::size_t n = 0; n < N; ++n) {
                const double* xc = xp + (n * C + c) * T * HW;
                const double* gc = gp + (n * C + c) * T * HW;
                for (std::size_t tt = 0; tt < T; ++tt) {
                  const double* grow = gc + tt * HW;
                  const double* cur = xc + tt * HW;
                  for (std::size_t i = 0; i < HW; ++i) a1 += grow[i] * cur[i];
                  if (tt > 0) {
                    const double* prev = xc + (tt - 1) * HW;
                    for (std::size_t i = 0; i < HW; ++i)
                      a0 += grow[i] * prev[i];
                  }
                  if (tt + 1 < T) {
                    const double* next = xc + (tt + 1) * HW;
                    for (std::size_t i = 0; i < HW; ++i)
                      a2 += grow[i] * next[i];
                  }
                }
              }
              dp[c * 3 + 0] += a0;
              dp[c * 3 + 1] += a1;
              dp[c * 3 + 2] += a2;
            }
          });
        }
        if (tp.wants(b)) {
          Tensor& db = tp.gbuf(b);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const double* gc = gp + (n * C + c) * T * HW;
              double acc = 0.0;
              for (std::size_t i = 0; i < T * HW; ++i) acc += gc[i];
              db[c] += acc;
            }
        }
      });
}

// Per (sample, channel) RMS normalization over T x H x W, scaled by gain[c].
// With `frozen_stats` the backward pass treats the RMS statistic as a
// constant (evaluation-style), which receptive-field probes use to isolate
// the temporal pathway; training always differentiates the statistic.
inline Var rms_channel_norm(Tape& t, Var x, Var gain,
                            bool frozen_stats = false) {
  detail::check_video(t.val(x), "rms_channel_norm");
  const Tensor& xv = t.val(x);
  const Tensor& gv = t.val(gain);
  const std::size_t N = xv.dim(0), C = xv.dim(1);
  const std::size_t V = xv.dim(2) * xv.dim(3) * xv.dim(4);
  if (gv.rank() != 1 || gv.dim(0) != C)
    throw ShapeMismatch("rms_channel_norm: gain " + shape_str(gv.shape()));
  constexpr double kEps = 1e-6;

  Tensor out(xv.shape());
  Tensor rms(Shape{N, C});
  const double* xp = xv.data();
  double* op = out.data();
  double* rp = rms.data();
  parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t job = lo; job < hi; ++job) {
      const double* xr = xp + job * V;
      double m = 0.0;
      for (std::size_t i = 0; i < V; ++i) m += xr[i] * xr[i];
      const double r = std::sqrt(m / static_cast<double>(V) + kEps);
      rp[job] = r;
      const double f = gv[job % C] / r;
      double* orow = op + job * V;
      for (std::size_t i = 0; i < V; ++i) orow[i] = xr[i] * f;
    }
  });
  return t.make(
      std::move(out), {x.id, gain.id},
      [x, gain, N, C, V, frozen_stats, rms = std::move(rms)](Tape& tp,
                                                             Var self) {
        const Tensor& g = tp.grad(self);
        const double* gp = g.data();
        const double* xp = tp.val(x).data();
        const Tensor& gv = tp.val(gain);
        if (tp.wants(x)) {
          Tensor& dx = tp.gbuf(x);
          double* dp = dx.data();
          parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t job = lo; job < hi; ++job) {
              const double* xr = xp + job * V;
              const double* gr = gp + job * V;
              double* dr = dp + job * V;
              const double r = rms[job];
              const double gamma = gv[job % C];
              double s1 = 0.0;
              if (!frozen_stats)
                for (std::size_t i = 0; i < V; ++i) s1 += gr[i] * xr[i];
              const double k = gamma * s1 / (static_cast<double>(V) * r * r * r);
              const double f = gamma / r;
              for (std::size_t i = 0; i < V; ++i)
                dr[i] += f * gr[i] - k * xr[i];
            }
          });
        }
        if (tp.wants(gain)) {
          Tensor& dg = tp.gbuf(gain);
          for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t job = n * C + c;
              const double* xr = xp + job * V;
              const double* gr = gp + job * V;
              double s1 = 0.0;
              for (std::size_t i = 0; i < V; ++i) s1 += gr[i] * xr[i];
              acc += s1 / rms[job];
            }
            dg[c] += acc;
          }
        }
      });
}

// Mean over T, H, W.
inline Var global_avg_pool(Tape& t, Var x) {
  detail::check_video(t.val(x), "global_avg_pool");
  const Tensor& xv = t.val(x);
  const std::size_t N = xv.dim(0), C = xv.dim(1);
  const std::size_t V = xv.dim(2) * xv.dim(3) * xv.dim(4);
  Tensor out(Shape{N, C});
  const double inv = 1.0 / static_cast<double>(V);
  for (std::size_t j = 0; j < N * C; ++j) {
    const double* xr = xv.data() + j * V;
    double acc = 0.0;
    for (std::size_t i = 0; i < V; ++i) acc += xr[i];
    out[j] = acc * inv;
  }
  return t.make(std::move(out), {x.id}, [x, N, C, V, inv](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor& dx = tp.gbuf(x);
    double* dp = dx.data();
    for (std::size_t j = 0; j < N * C; ++j) {
      const double gj = g[j] * inv;
      double* dr = dp + j * V;
      for (std::size_t i = 0; i < V; ++i) dr[i] += gj;
    }
  });
}

// Mean over the batch of -log softmax(logits)[label]; max-subtracted.
inline Var softmax_cross_entropy(Tape& t, Var logits,
                                 const std::vector<int>& labels) {
  const Tensor& lv = t.val(logits);
  if (lv.rank() != 2 || lv.dim(0) != labels.size())
    throw ShapeMismatch("softmax_cross_entropy: logits " +
                        shape_str(lv.shape()) + " for " +
                        std::to_string(labels.size()) + " labels");
  const std::size_t N = lv.dim(0), K = lv.dim(1);
  for (int l : labels)
    if (l < 0 || l >= static_cast<int>(K))
      throw LabelOutOfRange("softmax_cross_entropy: label " +
                            std::to_string(l) + " for K=" + std::to_string(K));
  Tensor probs(Shape{N, K});
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double* row = lv.data() + i * K;
    double mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double logz = std::log(z);
    for (std::size_t k = 0; k < K; ++k)
      probs[i * K + k] = std::exp(row[k] - mx) / z;
    loss += -(row[labels[i]] - mx - logz);
  }
  loss /= static_cast<double>(N);
  return t.make(Tensor::scalar(loss), {logits.id},
                [logits, labels, N, K, probs = std::move(probs)](Tape& tp,
                                                                 Var self) {
                  const double g = tp.grad(self)[0] / static_cast<double>(N);
                  Tensor& d = tp.gbuf(logits);
                  for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                      const double onehot =
                          (static_cast<int>(k) == labels[i]) ? 1.0 : 0.0;
                      d[i * K + k] += g * (probs[i * K + k] - onehot);
                    }
                });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Value-level module surface (no tape).
// ---------------------------------------------------------------------------

namespace nn {

inline Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape t;
  return t.val(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b), 1));
}

inline Tensor conv1d_temporal(const Tensor& x, const Tensor& w,
                              const Tensor& b) {
  Tape t;
  return t.val(
      ops::conv1d_temporal(t, t.constant(x), t.constant(w), t.constant(b)));
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape t;
  return t.val(ops::linear(t, t.constant(x), t.constant(w), t.constant(b)));
}

inline Tensor rms_channel_norm(const Tensor& x, const Tensor& gain) {
  Tape t;
  return t.val(ops::rms_channel_norm(t, t.constant(x), t.constant(gain)));
}

inline Tensor global_avg_pool(const Tensor& x) {
  Tape t;
  return t.val(ops::global_avg_pool(t, t.constant(x)));
}

inline double softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<int>& labels) {
  Tape t;
  return t.val(ops::softmax_cross_entropy(t, t.constant(logits), labels))[0];
}

}  // namespace nn

}  // namespace dtfnet
