#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "dtfnet/autograd.hpp"
#include "dtfnet/error.hpp"
#include "dtfnet/fa.hpp"
#include "dtfnet/fft.hpp"
#include "dtfnet/nn.hpp"
#include "dtfnet/parallel.hpp"
#include "dtfnet/rng.hpp"
#include "dtfnet/tensor.hpp"

namespace dtfnet {

namespace ops {

// Pair of tape handles holding the real/imaginary planes of a spectrum.
struct ComplexVar {
  Var re;
  Var im;
};

// Real FFT along the temporal axis: N x C x T x H x W ->
// two planes N x C x M x H x W with M = floor(T/2)+1.
inline ComplexVar rfft_time(Tape& t, Var x) {
  const Tensor& xv = t.val(x);
  if (xv.rank() != 5) throw ShapeMismatch("rfft_time: expected N x C x T x H x W");
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), H = xv.dim(3),
                    W = xv.dim(4);
  const std::size_t M = fft::spectrum_size(T);
  const std::size_t HW = H * W;
  fft::trig_table(T);  // build outside the parallel region

  Tensor out_re(Shape{N, C, M, H, W});
  Tensor out_im(Shape{N, C, M, H, W});
  {
    const double* xp = xv.data();
    double* rp = out_re.data();
    double* ip = out_im.data();
    parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> sig(T);
      for (std::size_t job = lo; job < hi; ++job) {
        const double* xc = xp + job * T * HW;
        double* rc = rp + job * M * HW;
        double* ic = ip + job * M * HW;
        for (std::size_t cell = 0; cell < HW; ++cell) {
          for (std::size_t tt = 0; tt < T; ++tt) sig[tt] = xc[tt * HW + cell];
          fft::ComplexSeq s = fft::rfft(sig);
          for (std::size_t m = 0; m < M; ++m) {
            rc[m * HW + cell] = s.re[m];
            ic[m * HW + cell] = s.im[m];
          }
        }
      }
    });
  }
  Var re = t.make(std::move(out_re), {x.id}, nullptr);
  Var im = t.make(
      std::move(out_im), {x.id},
      [x, re, N, C, T, M, HW](Tape& tp, Var self) {
        const bool has_re = tp.touched(re);
        const bool has_im = tp.touched(self);
        if (!has_re && !has_im) return;
        const Tensor& gre = tp.grad(re);
        const Tensor& gim = tp.grad(self);
        Tensor& dx = tp.gbuf(x);
        const double* grp = gre.data();
        const double* gip = gim.data();
        double* dp = dx.data();
        parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
          std::vector<double> gr(M), gi(M), acc(T);
          for (std::size_t job = lo; job < hi; ++job) {
            const double* grc = grp + job * M * HW;
            const double* gic = gip + job * M * HW;
            double* dc = dp + job * T * HW;
            for (std::size_t cell = 0; cell < HW; ++cell) {
              for (std::size_t m = 0; m < M; ++m) {
                gr[m] = grc[m * HW + cell];
                gi[m] = gic[m * HW + cell];
              }
              std::fill(acc.begin(), acc.end(), 0.0);
              fft::rfft_adjoint_accum(gr.data(), gi.data(), M, T, acc.data());
              for (std::size_t tt = 0; tt < T; ++tt)
                dc[tt * HW + cell] += acc[tt];
            }
          }
        });
      },
      {re.id});
  return {re, im};
}

// Inverse real FFT along the temporal axis: two planes N x C x M x H x W ->
// N x C x T x H x W.
inline Var irfft_time(Tape& t, ComplexVar s, std::size_t T) {
  const Tensor& rv = t.val(s.re);
  const Tensor& iv = t.val(s.im);
  check_same_shape(rv, iv, "irfft_time");
  if (rv.rank() != 5) throw ShapeMismatch("irfft_time: expected N x C x M x H x W");
  const std::size_t N = rv.dim(0), C = rv.dim(1), M = rv.dim(2), H = rv.dim(3),
                    W = rv.dim(4);
  if (M != fft::spectrum_size(T))
    throw SpectrumSizeMismatch("irfft_time: M=" + std::to_string(M) +
                               " for T=" + std::to_string(T));
  const std::size_t HW = H * W;
  fft::trig_table(T);

  Tensor out(Shape{N, C, T, H, W});
  {
    const double* rp = rv.data();
    const double* ip = iv.data();
    double* op = out.data();
    parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
      fft::ComplexSeq spec(M);
      for (std::size_t job = lo; job < hi; ++job) {
        const double* rc = rp + job * M * HW;
        const double* ic = ip + job * M * HW;
        double* oc = op + job * T * HW;
        for (std::size_t cell = 0; cell < HW; ++cell) {
          for (std::size_t m = 0; m < M; ++m) {
            spec.re[m] = rc[m * HW + cell];
            spec.im[m] = ic[m * HW + cell];
          }
          std::vector<double> y = fft::irfft(spec, T);
          for (std::size_t tt = 0; tt < T; ++tt) oc[tt * HW + cell] = y[tt];
        }
      }
    });
  }
  Var re = s.re, im = s.im;
  return t.make(std::move(out), {re.id, im.id},
                [re, im, N, C, T, M, HW](Tape& tp, Var self) {
                  const Tensor& g = tp.grad(self);
                  const double* gp = g.data();
                  const bool want_re = tp.wants(re);
                  const bool want_im = tp.wants(im);
                  if (!want_re && !want_im) return;
                  Tensor& dre = tp.gbuf(re);
                  Tensor& dim = tp.gbuf(im);
                  double* drp = dre.data();
                  double* dip = dim.data();
                  parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
                    std::vector<double> gy(T), ar(M), ai(M);
                    for (std::size_t job = lo; job < hi; ++job) {
                      const double* gc = gp + job * T * HW;
                      double* drc = drp + job * M * HW;
                      double* dic = dip + job * M * HW;
                      for (std::size_t cell = 0; cell < HW; ++cell) {
                        for (std::size_t tt = 0; tt < T; ++tt)
                          gy[tt] = gc[tt * HW + cell];
                        std::fill(ar.begin(), ar.end(), 0.0);
                        std::fill(ai.begin(), ai.end(), 0.0);
                        fft::irfft_adjoint_accum(gy.data(), T, ar.data(),
                                                 ai.data());
                        for (std::size_t m = 0; m < M; ++m) {
                          drc[m * HW + cell] += ar[m];
                          dic[m * HW + cell] += ai[m];
                        }
                      }
                    }
                  });
                });
}

// Elementwise complex product; re/im treated as independent real channels.
inline ComplexVar complex_mul(Tape& t, ComplexVar a, ComplexVar b) {
  const Tensor& ar = t.val(a.re);
  const Tensor& ai = t.val(a.im);
  const Tensor& br = t.val(b.re);
  const Tensor& bi = t.val(b.im);
  check_same_shape(ar, ai, "complex_mul");
  check_same_shape(ar, br, "complex_mul");
  check_same_shape(ar, bi, "complex_mul");
  const std::size_t n = ar.numel();
  Tensor out_re(ar.shape());
  Tensor out_im(ar.shape());
  for (std::size_t i = 0; i < n; ++i) {
    out_re[i] = ar[i] * br[i] - ai[i] * bi[i];
    out_im[i] = ar[i] * bi[i] + ai[i] * br[i];
  }
  Var re = t.make(std::move(out_re), {a.re.id, a.im.id, b.re.id, b.im.id},
                  nullptr);
  Var im = t.make(
      std::move(out_im), {a.re.id, a.im.id, b.re.id, b.im.id},
      [a, b, re, n](Tape& tp, Var self) {
        const bool has_re = tp.touched(re);
        const bool has_im = tp.touched(self);
        if (!has_re && !has_im) return;
        const Tensor& gre = tp.grad(re);
        const Tensor& gim = tp.grad(self);
        const Tensor& ar = tp.val(a.re);
        const Tensor& ai = tp.val(a.im);
        const Tensor& br = tp.val(b.re);
        const Tensor& bi = tp.val(b.im);
        if (tp.wants(a.re)) {
          Tensor& d = tp.gbuf(a.re);
          for (std::size_t i = 0; i < n; ++i)
            d[i] += gre[i] * br[i] + gim[i] * bi[i];
        }
        if (tp.wants(a.im)) {
          Tensor& d = tp.gbuf(a.im);
          for (std::size_t i = 0; i < n; ++i)
            d[i] += -gre[i] * bi[i] + gim[i] * br[i];
        }
        if (tp.wants(b.re)) {
          Tensor& d = tp.gbuf(b.re);
          for (std::size_t i = 0; i < n; ++i)
            d[i] += gre[i] * ar[i] + gim[i] * ai[i];
        }
        if (tp.wants(b.im)) {
          Tensor& d = tp.gbuf(b.im);
          for (std::size_t i = 0; i < n; ++i)
            d[i] += -gre[i] * ai[i] + gim[i] * ar[i];
        }
      },
      {re.id});
  return {re, im};
}

// Group expansion along the channel axis: N x R x M x H x W ->
// N x R*G x M x H x W, group row r copied to channels [r*G, (r+1)*G).
inline Var expand_groups(Tape& t, Var x, std::size_t G) {
  const Tensor& xv = t.val(x);
  if (xv.rank() != 5) throw ShapeMismatch("expand_groups: expected rank 5");
  const std::size_t N = xv.dim(0), R = xv.dim(1);
  const std::size_t inner = xv.dim(2) * xv.dim(3) * xv.dim(4);
  Tensor out(Shape{N, R * G, xv.dim(2), xv.dim(3), xv.dim(4)});
  const double* xp = xv.data();
  double* op = out.data();
  for (std::size_t nidx = 0; nidx < N; ++nidx)
    for (std::size_t r = 0; r < R; ++r) {
      const double* src = xp + (nidx * R + r) * inner;
      for (std::size_t g = 0; g < G; ++g) {
        double* dst = op + ((nidx * R + r) * G + g) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i];
      }
    }
  return t.make(std::move(out), {x.id}, [x, N, R, G, inner](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const double* gp = g.data();
    Tensor& dx = tp.gbuf(x);
    double* dp = dx.data();
    for (std::size_t nidx = 0; nidx < N; ++nidx)
      for (std::size_t r = 0; r < R; ++r) {
        double* dst = dp + (nidx * R + r) * inner;
        for (std::size_t gi = 0; gi < G; ++gi) {
          const double* src = gp + ((nidx * R + r) * G + gi) * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
  });
}

// Column slice of a rank-2 tensor: rows kept, columns [lo, hi).
inline Var slice_cols(Tape& t, Var x, std::size_t lo, std::size_t hi) {
  const Tensor& xv = t.val(x);
  if (xv.rank() != 2 || hi > xv.dim(1) || lo >= hi)
    throw ShapeMismatch("slice_cols: bad range");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1), width = hi - lo;
  Tensor out(Shape{rows, width});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < width; ++j)
      out[i * width + j] = xv[i * cols + lo + j];
  return t.make(std::move(out), {x.id},
                [x, rows, cols, lo, width](Tape& tp, Var self) {
                  const Tensor& g = tp.grad(self);
                  Tensor& dx = tp.gbuf(x);
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < width; ++j)
                      dx[i * cols + lo + j] += g[i * width + j];
                });
}

// Per-location predicted 3-tap depthwise temporal convolution. taps:
// N x R x 3 x H x W with R = C/G; channels within a group share taps.
inline Var dynamic_conv1d(Tape& t, Var x, Var taps, std::size_t G) {
  const Tensor& xv = t.val(x);
  const Tensor& kv = t.val(taps);
  if (xv.rank() != 5 || kv.rank() != 5 || kv.dim(2) != 3)
    throw ShapeMismatch("dynamic_conv1d: bad ranks");
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), H = xv.dim(3),
                    W = xv.dim(4), R = kv.dim(1);
  if (R * G != C || kv.dim(0) != N || kv.dim(3) != H || kv.dim(4) != W)
    throw GroupMismatch("dynamic_conv1d: taps " + shape_str(kv.shape()) +
                        " for x " + shape_str(xv.shape()) +
                        " G=" + std::to_string(G));
  const std::size_t HW = H * W;
  Tensor out(xv.shape());
  const double* xp = xv.data();
  const double* kp = kv.data();
  double* op = out.data();
  parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t job = lo; job < hi; ++job) {
      const std::size_t c = job % C;
      const std::size_t n = job / C;
      const double* xc = xp + job * T * HW;
      const double* tap = kp + (n * R + c / G) * 3 * HW;
      double* oc = op + job * T * HW;
      for (std::size_t tt = 0; tt < T; ++tt) {
        const double* prev = tt > 0 ? xc + (tt - 1) * HW : nullptr;
        const double* cur = xc + tt * HW;
        const double* next = tt + 1 < T ? xc + (tt + 1) * HW : nullptr;
        double* orow = oc + tt * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          double acc = tap[HW + i] * cur[i];
          if (prev) acc += tap[i] * prev[i];
          if (next) acc += tap[2 * HW + i] * next[i];
          orow[i] = acc;
        }
      }
    }
  });
  return t.make(
      std::move(out), {x.id, taps.id},
      [x, taps, N, C, R, G, T, HW](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const double* gp = g.data();
        if (tp.wants(x)) {
          Tensor& dx = tp.gbuf(x);
          const double* kp = tp.val(taps).data();
          double* dp = dx.data();
          parallel_for(N * C, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t job = lo; job < hi; ++job) {
              const std::size_t c = job % C;
              const std::size_t n = job / C;
              const double* gc = gp + job * T * HW;
              const double* tap = kp + (n * R + c / G) * 3 * HW;
              double* dc = dp + job * T * HW;
              for (std::size_t tt = 0; tt < T; ++tt) {
                const double* gprev = tt > 0 ? gc + (tt - 1) * HW : nullptr;
                const double* gcur = gc + tt * HW;
                const double* gnext = tt + 1 < T ? gc + (tt + 1) * HW : nullptr;
                double* drow = dc + tt * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                  double acc = tap[HW + i] * gcur[i];
                  if (gnext) acc += tap[i] * gnext[i];
                  if (gprev) acc += tap[2 * HW + i] * gprev[i];
                  drow[i] += acc;
                }
              }
            }
          });
        }
        if (tp.wants(taps)) {
          Tensor& dk = tp.gbuf(taps);
          const double* xp = tp.val(x).data();
          double* dp = dk.data();
          parallel_for(N * R, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t job = lo; job < hi; ++job) {
              const std::size_t r = job % R;
              const std::size_t n = job / R;
              double* drow = dp + job * 3 * HW;
              for (std::size_t gi = 0; gi < G; ++gi) {
                const std::size_t c = r * G + gi;
                const double* xc = xp + (n * C + c) * T * HW;
                const double* gc = gp + (n * C + c) * T * HW;
                for (std::size_t tt = 0; tt < T; ++tt) {
                  const double* grow = gc + tt * HW;
                  const double* cur = xc + tt * HW;
                  for (std::size_t i = 0; i < HW; ++i)
                    drow[HW + i] += grow[i] * cur[i];
                  if (tt > 0) {
                    const double* prev = xc + (tt - 1) * HW;
                    for (std::size_t i = 0; i < HW; ++i)
                      drow[i] += grow[i] * prev[i];
                  }
                  if (tt + 1 < T) {
                    const double* next = xc + (tt + 1) * HW;
                    for (std::size_t i = 0; i < HW; ++i)
                      drow[2 * HW + i] += grow[i] * next[i];
                  }
                }
              }
            }
          });
        }
      });
}

// Replicates a C x M filter over batch and spatial grid: -> N x C x M x H x W.
inline Var broadcast_filter(Tape& t, Var f, std::size_t N, std::size_t H,
                            std::size_t W) {
  const Tensor& fv = t.val(f);
  if (fv.rank() != 2) throw ShapeMismatch("broadcast_filter: expected C x M");
  const std::size_t C = fv.dim(0), M = fv.dim(1);
  const std::size_t HW = H * W;
  Tensor out(Shape{N, C, M, H, W});
  double* op = out.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t cm = 0; cm < C * M; ++cm) {
      double* dst = op + (n * C * M + cm) * HW;
      const double v = fv[cm];
      for (std::size_t i = 0; i < HW; ++i) dst[i] = v;
    }
  return t.make(std::move(out), {f.id}, [f, N, C, M, HW](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const double* gp = g.data();
    Tensor& df = tp.gbuf(f);
    for (std::size_t cm = 0; cm < C * M; ++cm) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* src = gp + (n * C * M + cm) * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += src[i];
      }
      df[cm] += acc;
    }
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Dynamic Temporal Filter mechanism.
// ---------------------------------------------------------------------------

namespace dtf {

// Per-location complex filter bank of shape C x M. Channels inside the same
// group of size G hold identical rows.
struct FrequencyFilter {
  Tensor re;  // C x M
  Tensor im;  // C x M
  std::size_t G = 1;
};

enum class FilterInit { identity, zero };

// Fully connected estimator mapping the flattened per-location feature
// (C + k^2) x T onto (C/G) x M complex filter values, laid out as the re
// plane followed by the im plane.
struct FilterEstimator {
  Tensor weight;  // [2 * (C/G) * M] x [(C + k^2) * T]
  Tensor bias;    // [2 * (C/G) * M]
  std::size_t C = 0, G = 1, M = 0, T = 0, k = 3;

  std::size_t rows() const { return C / G; }
  std::size_t in_dim() const { return (C + k * k) * T; }
  std::size_t out_dim() const { return 2 * rows() * M; }
};

// Identity initialization leaves the block at f_o = 2 f: every re bin bias
// is 1, im bias 0, weights small gaussian noise (std 1e-3).
inline FilterEstimator make_filter_estimator(std::size_t C, std::size_t G,
                                             std::size_t T, std::size_t k,
                                             FilterInit init, Rng& rng) {
  if (G == 0 || C % G != 0)
    throw GroupMismatch("make_filter_estimator: G=" + std::to_string(G) +
                        " does not divide C=" + std::to_string(C));
  FilterEstimator est;
  est.C = C;
  est.G = G;
  est.M = fft::spectrum_size(T);
  est.T = T;
  est.k = k;
  est.weight = Tensor(Shape{est.out_dim(), est.in_dim()});
  for (std::size_t i = 0; i < est.weight.numel(); ++i)
    est.weight[i] = 1e-3 * rng.next_gaussian();
  est.bias = Tensor(Shape{est.out_dim()});
  if (init == FilterInit::identity) {
    for (std::size_t i = 0; i < est.rows() * est.M; ++i) est.bias[i] = 1.0;
  }
  return est;
}

// S_i = reshape(linear(flatten(f_loc))): f_loc is (C + k^2) x T, the output
// is the (C/G) x M complex intermediate filter.
inline std::pair<Tensor, Tensor> estimate_filter(const Tensor& f_loc,
                                                 const FilterEstimator& est) {
  if (f_loc.rank() != 2 || f_loc.dim(0) != est.C + est.k * est.k ||
      f_loc.dim(1) != est.T)
    throw ShapeMismatch("estimate_filter: f_loc " + shape_str(f_loc.shape()) +
                        " for estimator expecting " +
                        std::to_string(est.C + est.k * est.k) + " x " +
                        std::to_string(est.T));
  Tensor flat = tensor_reshape(f_loc, {1, est.in_dim()});
  Tensor out = nn::linear(flat, est.weight, est.bias);
  const std::size_t RM = est.rows() * est.M;
  Tensor re(Shape{est.rows(), est.M});
  Tensor im(Shape{est.rows(), est.M});
  for (std::size_t i = 0; i < RM; ++i) {
    re[i] = out[i];
    im[i] = out[RM + i];
  }
  return {re, im};
}

// Group row r of S_i is copied to channels [r*G, (r+1)*G).
inline FrequencyFilter expand_filter(const Tensor& si_re, const Tensor& si_im,
                                     std::size_t C) {
  check_same_shape(si_re, si_im, "expand_filter");
  if (si_re.rank() != 2) throw ShapeMismatch("expand_filter: expected R x M");
  const std::size_t R = si_re.dim(0), M = si_re.dim(1);
  if (R == 0 || C % R != 0)
    throw GroupMismatch("expand_filter: " + std::to_string(R) +
                        " rows do not divide C=" + std::to_string(C));
  const std::size_t G = C / R;
  FrequencyFilter out;
  out.G = G;
  out.re = Tensor(Shape{C, M});
  out.im = Tensor(Shape{C, M});
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t r = c / G;
    for (std::size_t m = 0; m < M; ++m) {
      out.re[c * M + m] = si_re[r * M + m];
      out.im[c * M + m] = si_im[r * M + m];
    }
  }
  return out;
}

// Elementwise complex modulation S' = S x S_c.
inline std::pair<Tensor, Tensor> modulate_spectrum(const Tensor& s_re,
                                                   const Tensor& s_im,
                                                   const Tensor& c_re,
                                                   const Tensor& c_im) {
  check_same_shape(s_re, s_im, "modulate_spectrum");
  check_same_shape(s_re, c_re, "modulate_spectrum");
  check_same_shape(s_re, c_im, "modulate_spectrum");
  Tensor out_re(s_re.shape());
  Tensor out_im(s_re.shape());
  for (std::size_t i = 0; i < s_re.numel(); ++i) {
    out_re[i] = s_re[i] * c_re[i] - s_im[i] * c_im[i];
    out_im[i] = s_re[i] * c_im[i] + s_im[i] * c_re[i];
  }
  return {out_re, out_im};
}

struct MechanismOut {
  Var out;           // N x C x T x H x W
  ops::ComplexVar filter;  // expanded S_c, N x C x M x H x W
};

// Full per-location pipeline on the tape: spectrum, estimated filter,
// modulation, inverse transform, residual fusion f + f'.
inline MechanismOut dtf_mechanism_forward_var(Tape& t, Var f_enh, Var f_cor,
                                              Var est_weight, Var est_bias,
                                              std::size_t G) {
  const Tensor& fv = t.val(f_enh);
  const Tensor& cv = t.val(f_cor);
  if (fv.rank() != 5 || cv.rank() != 5)
    throw ShapeMismatch("dtf_mechanism: expected rank-5 inputs");
  const std::size_t N = fv.dim(0), C = fv.dim(1), T = fv.dim(2), H = fv.dim(3),
                    W = fv.dim(4);
  const std::size_t K2 = cv.dim(1);
  const std::size_t M = fft::spectrum_size(T);
  if (cv.dim(0) != N || cv.dim(2) != T || cv.dim(3) != H || cv.dim(4) != W)
    throw ShapeMismatch("dtf_mechanism: correlation shape " +
                        shape_str(cv.shape()));
  if (C % G != 0) throw GroupMismatch("dtf_mechanism: G does not divide C");
  const std::size_t R = C / G;
  const Tensor& wv = t.val(est_weight);
  if (wv.rank() != 2 || wv.dim(0) != 2 * R * M || wv.dim(1) != (C + K2) * T)
    throw ShapeMismatch("dtf_mechanism: estimator weight " +
                        shape_str(wv.shape()));

  ops::ComplexVar spec = ops::rfft_time(t, f_enh);

  // Per-location estimator input: channel-major (C + k^2) x T per (n, y, x).
  Var cat = ops::concat(t, f_enh, f_cor, 1);
  Var perm = ops::permute(t, cat, {0, 3, 4, 1, 2});
  Var flat = ops::reshape(t, perm, {N * H * W, (C + K2) * T});
  Var lin = ops::linear(t, flat, est_weight, est_bias);
  Var si_re = ops::slice_cols(t, lin, 0, R * M);
  Var si_im = ops::slice_cols(t, lin, R * M, 2 * R * M);
  auto to_planes = [&](Var v) {
    Var r5 = ops::reshape(t, v, {N, H, W, R, M});
    return ops::permute(t, r5, {0, 3, 4, 1, 2});  // N x R x M x H x W
  };
  Var sc_re = ops::expand_groups(t, to_planes(si_re), G);
  Var sc_im = ops::expand_groups(t, to_planes(si_im), G);

  ops::ComplexVar modulated =
      ops::complex_mul(t, spec, ops::ComplexVar{sc_re, sc_im});
  Var f_prime = ops::irfft_time(t, modulated, T);
  Var out = ops::add(t, f_enh, f_prime);
  return {out, ops::ComplexVar{sc_re, sc_im}};
}

// Value-level mechanism per the module contract.
inline Tensor dtf_mechanism_forward(const Tensor& f_enh,
                                    const CorrelationMap& f_cor,
                                    const FilterEstimator& est) {
  Tape t;
  MechanismOut r = dtf_mechanism_forward_var(
      t, t.constant(f_enh), t.constant(f_cor.weights), t.constant(est.weight),
      t.constant(est.bias), est.G);
  return t.val(r.out);
}

// IFFT of a learnt filter row: the equivalent full-length temporal kernel.
inline std::vector<double> export_equivalent_kernel(const fft::ComplexSeq& row,
                                                    std::size_t T) {
  return fft::irfft(row, T);
}

// CSV dump of one per-location filter bank: `channel,bin,re,im` rows for the
// spectrum followed by `channel,t,kernel` rows for the IFFT'd kernels.
inline std::string filter_csv(const Tensor& re, const Tensor& im,
                              std::size_t T) {
  check_same_shape(re, im, "filter_csv");
  if (re.rank() != 2) throw ShapeMismatch("filter_csv: expected C x M");
  const std::size_t C = re.dim(0), M = re.dim(1);
  if (M != fft::spectrum_size(T))
    throw SpectrumSizeMismatch("filter_csv: M=" + std::to_string(M) +
                               " for T=" + std::to_string(T));
  std::string out = "channel,bin,re,im\n";
  char buf[96];
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t m = 0; m < M; ++m) {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.12g,%.12g\n", c, m,
                    re[c * M + m], im[c * M + m]);
      out += buf;
    }
  out += "channel,t,kernel\n";
  for (std::size_t c = 0; c < C; ++c) {
    fft::ComplexSeq row(M);
    for (std::size_t m = 0; m < M; ++m) {
      row.re[m] = re[c * M + m];
      row.im[m] = im[c * M + m];
    }
    std::vector<double> kernel = export_equivalent_kernel(row, T);
    for (std::size_t tt = 0; tt < T; ++tt) {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.12g\n", c, tt, kernel[tt]);
      out += buf;
    }
  }
  return out;
}

}  // namespace dtf

}  // namespace dtfnet
