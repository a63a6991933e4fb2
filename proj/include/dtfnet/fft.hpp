#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "dtfnet/error.hpp"

namespace dtfnet::fft {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Number of independent spectrum bins of a length-T real signal.
inline std::size_t spectrum_size(std::size_t T) { return T / 2 + 1; }

// Complex sequence stored as separate real/imaginary planes.
struct ComplexSeq {
  std::vector<double> re;
  std::vector<double> im;

  ComplexSeq() = default;
  explicit ComplexSeq(std::size_t n) : re(n, 0.0), im(n, 0.0) {}
  ComplexSeq(std::vector<double> r, std::vector<double> i)
      : re(std::move(r)), im(std::move(i)) {
    if (re.size() != im.size())
      throw ShapeMismatch("ComplexSeq: re/im length mismatch");
  }
  std::size_t size() const { return re.size(); }
};

// Table of cos/sin(2*pi*i/T) with the exactly-representable entries pinned,
// so DC and Nyquist bins of a real transform come out exactly real.
struct TrigTable {
  std::size_t T = 0;
  std::vector<double> cos_v;
  std::vector<double> sin_v;

  explicit TrigTable(std::size_t n) : T(n), cos_v(n), sin_v(n) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = kTwoPi * static_cast<double>(i) / static_cast<double>(n);
      cos_v[i] = std::cos(a);
      sin_v[i] = std::sin(a);
    }
    cos_v[0] = 1.0;
    sin_v[0] = 0.0;
    if (n % 2 == 0) {
      cos_v[n / 2] = -1.0;
      sin_v[n / 2] = 0.0;
    }
  }
};

inline const TrigTable& trig_table(std::size_t T) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<TrigTable>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(T);
  if (it == cache.end())
    it = cache.emplace(T, std::make_unique<TrigTable>(T)).first;
  return *it->second;
}

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 decimation-in-time transform, in place.
// inverse=true conjugates the twiddles but applies no 1/N scaling.
inline void fft_radix2_inplace(std::vector<double>& re, std::vector<double>& im,
                               bool inverse) {
  const std::size_t n = re.size();
  assert(is_pow2(n));
  // Bit reversal.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const TrigTable& tt = trig_table(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t tw = k * step;
        const double wr = tt.cos_v[tw];
        const double wi = inverse ? tt.sin_v[tw] : -tt.sin_v[tw];
        const std::size_t a = i + k, b = i + k + len / 2;
        const double xr = re[b] * wr - im[b] * wi;
        const double xi = re[b] * wi + im[b] * wr;
        re[b] = re[a] - xr;
        im[b] = im[a] - xi;
        re[a] += xr;
        im[a] += xi;
      }
    }
  }
}

}  // namespace detail

// Direct evaluation of S[k] = sum_t f[t] e^{-j 2pi k t / T}.
inline ComplexSeq dft_naive(const ComplexSeq& signal) {
  const std::size_t T = signal.size();
  if (T == 0) throw EmptySignal("dft_naive: empty signal");
  const TrigTable& tt = trig_table(T);
  ComplexSeq out(T);
  for (std::size_t k = 0; k < T; ++k) {
    double sr = 0.0, si = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t idx = (k * t) % T;
      const double c = tt.cos_v[idx], s = tt.sin_v[idx];
      sr += signal.re[t] * c + signal.im[t] * s;
      si += -signal.re[t] * s + signal.im[t] * c;
    }
    out.re[k] = sr;
    out.im[k] = si;
  }
  return out;
}

// Direct evaluation of f[t] = (1/T) sum_k S[k] e^{+j 2pi k t / T}.
inline ComplexSeq idft_naive(const ComplexSeq& spectrum) {
  const std::size_t T = spectrum.size();
  if (T == 0) throw EmptySignal("idft_naive: empty spectrum");
  const TrigTable& tt = trig_table(T);
  ComplexSeq out(T);
  const double inv = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    double sr = 0.0, si = 0.0;
    for (std::size_t k = 0; k < T; ++k) {
      const std::size_t idx = (k * t) % T;
      const double c = tt.cos_v[idx], s = tt.sin_v[idx];
      sr += spectrum.re[k] * c - spectrum.im[k] * s;
      si += spectrum.re[k] * s + spectrum.im[k] * c;
    }
    out.re[t] = sr * inv;
    out.im[t] = si * inv;
  }
  return out;
}

// Forward transform of a real signal; returns the M = floor(T/2)+1
// independent bins. Radix-2 when T is a power of two, direct sum otherwise.
// Unnormalized, matching dft_naive.
inline ComplexSeq rfft(const std::vector<double>& signal) {
  const std::size_t T = signal.size();
  if (T == 0) throw EmptySignal("rfft: empty signal");
  const std::size_t M = spectrum_size(T);
  ComplexSeq out(M);
  if (detail::is_pow2(T)) {
    std::vector<double> re(signal), im(T, 0.0);
    detail::fft_radix2_inplace(re, im, false);
    for (std::size_t k = 0; k < M; ++k) {
      out.re[k] = re[k];
      out.im[k] = im[k];
    }
  } else {
    const TrigTable& tt = trig_table(T);
    for (std::size_t k = 0; k < M; ++k) {
      double sr = 0.0, si = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t idx = (k * t) % T;
        sr += signal[t] * tt.cos_v[idx];
        si -= signal[t] * tt.sin_v[idx];
      }
      out.re[k] = sr;
      out.im[k] = si;
    }
  }
  // Hermitian endpoints of a real signal's spectrum are exactly real.
  out.im[0] = 0.0;
  if (T % 2 == 0) out.im[M - 1] = 0.0;
  return out;
}

namespace detail {

// Mirrors the half spectrum conjugate-symmetrically into a full-length
// spectrum. Imaginary parts of the DC bin (and Nyquist bin for even T) are
// dropped: the Hermitian structure forces them to zero.
inline ComplexSeq mirror_spectrum(const ComplexSeq& half, std::size_t T) {
  const std::size_t M = half.size();
  ComplexSeq full(T);
  full.re[0] = half.re[0];
  full.im[0] = 0.0;
  const bool even = (T % 2 == 0);
  const std::size_t last_paired = even ? M - 2 : M - 1;
  for (std::size_t k = 1; k <= last_paired; ++k) {
    full.re[k] = half.re[k];
    full.im[k] = half.im[k];
    full.re[T - k] = half.re[k];
    full.im[T - k] = -half.im[k];
  }
  if (even && M >= 2) {
    full.re[M - 1] = half.re[M - 1];
    full.im[M - 1] = 0.0;
  }
  return full;
}

}  // namespace detail

// Inverse of rfft: mirrors the spectrum and applies the 1/T inverse
// transform. The reconstruction is real by construction; the residual
// imaginary magnitude is reported through `imag_residue` when requested.
inline std::vector<double> irfft(const ComplexSeq& spectrum, std::size_t T,
                                 double* imag_residue = nullptr) {
  const std::size_t M = spectrum.size();
  if (T == 0) throw EmptySignal("irfft: zero length");
  if (M != spectrum_size(T)) {
    throw SpectrumSizeMismatch("irfft: got M=" + std::to_string(M) +
                               " for T=" + std::to_string(T) +
                               " (want " + std::to_string(spectrum_size(T)) + ")");
  }
  ComplexSeq full = detail::mirror_spectrum(spectrum, T);
  ComplexSeq time;
  if (detail::is_pow2(T)) {
    std::vector<double> re(full.re), im(full.im);
    detail::fft_radix2_inplace(re, im, true);
    const double inv = 1.0 / static_cast<double>(T);
    time = ComplexSeq(T);
    for (std::size_t t = 0; t < T; ++t) {
      time.re[t] = re[t] * inv;
      time.im[t] = im[t] * inv;
    }
  } else {
    time = idft_naive(full);
  }
  double resid = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double a = std::fabs(time.im[t]);
    if (a > resid) resid = a;
  }
  if (imag_residue) *imag_residue = resid;
  assert(resid < 1e-9);
  return time.re;
}

// Reference semantics for Eq.-style spectrum products: out[t] =
// sum_tau f[tau] g[(t - tau) mod T]. Direct O(T^2) sum; serves as the
// oracle for the convolution theorem.
inline std::vector<double> circular_convolve(const std::vector<double>& f,
                                             const std::vector<double>& g) {
  if (f.size() != g.size())
    throw ShapeMismatch("circular_convolve: length mismatch");
  const std::size_t T = f.size();
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double acc = 0.0;
    for (std::size_t tau = 0; tau < T; ++tau) {
      acc += f[tau] * g[(t + T - tau) % T];
    }
    out[t] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adjoints of the real transforms, used by reverse-mode differentiation.
// Validated against central differences, not trusted analytically.
// ---------------------------------------------------------------------------

// Accumulates d(rfft)/dx^T applied to cotangents (gre, gim) into dx[T].
// The imaginary parts of bin 0 (and Nyquist for even T) are constants of the
// forward map, so their cotangents do not contribute.
inline void rfft_adjoint_accum(const double* gre, const double* gim,
                               std::size_t M, std::size_t T, double* dx) {
  const TrigTable& tt = trig_table(T);
  const bool even = (T % 2 == 0);
  for (std::size_t t = 0; t < T; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
      const std::size_t idx = (k * t) % T;
      acc += gre[k] * tt.cos_v[idx];
      const bool endpoint = (k == 0) || (even && k == M - 1);
      if (!endpoint) acc -= gim[k] * tt.sin_v[idx];
    }
    dx[t] += acc;
  }
}

// Accumulates d(irfft)/dS^T applied to the cotangent gy[T] into
// (dre, dim)[M].
inline void irfft_adjoint_accum(const double* gy, std::size_t T, double* dre,
                                double* dim) {
  const std::size_t M = spectrum_size(T);
  const TrigTable& tt = trig_table(T);
  const double inv = 1.0 / static_cast<double>(T);
  const bool even = (T % 2 == 0);
  for (std::size_t k = 0; k < M; ++k) {
    const bool endpoint = (k == 0) || (even && k == M - 1);
    const double w = endpoint ? inv : 2.0 * inv;
    double ar = 0.0, ai = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t idx = (k * t) % T;
      ar += gy[t] * tt.cos_v[idx];
      ai -= gy[t] * tt.sin_v[idx];
    }
    dre[k] += w * ar;
    if (!endpoint) dim[k] += w * ai;
  }
}

}  // namespace dtfnet::fft
