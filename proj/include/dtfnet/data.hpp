#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dtfnet/error.hpp"
#include "dtfnet/rng.hpp"
#include "dtfnet/tensor.hpp"

namespace dtfnet::data {

// Synthetic clips whose classes differ only in the oscillation period of a
// moving blob's intensity. Periods are kept at >= 4 frames so short temporal
// windows cannot resolve a full cycle; the per-clip amplitude jitter keeps
// local derivative statistics from identifying the class on their own.
struct ClipSpec {
  std::size_t T = 16;
  std::size_t H = 8;
  std::size_t W = 8;
  std::size_t C_in = 1;
  std::size_t num_classes = 4;
  double sigma = 0.05;       // additive gaussian noise
  double amplitude = 1.0;    // oscillation amplitude before jitter
  double amp_jitter = 0.5;   // per-clip scale drawn from [1-j, 1+j]
  double base = 0.5;         // background level
  double blob_radius = 1.3;
  double traj_radius = 2.0;  // 0 = stationary blob
  std::vector<double> periods;  // empty: derived from T below

  // Spread period set p_c = max(4, T/d) over divisors {2, 3, 4, 6, 8, 12,
  // 16, 24, ...}, bumped by +1 frames on collisions. For T >= 24 and K = 4
  // this is exactly {T/2, T/3, T/4, T/6}.
  std::vector<double> class_periods() const {
    if (!periods.empty()) {
      if (periods.size() != num_classes)
        throw InvalidConfig("ClipSpec: periods must match num_classes");
      return periods;
    }
    std::vector<double> divisors{2, 3, 4, 6};
    while (divisors.size() < num_classes)
      divisors.push_back(divisors[divisors.size() - 4] * 4.0);
    std::vector<double> out;
    for (std::size_t c = 0; c < num_classes; ++c) {
      double p = std::max(4.0, static_cast<double>(T) / divisors[c]);
      while (std::find(out.begin(), out.end(), p) != out.end()) p += 1.0;
      out.push_back(p);
    }
    return out;
  }

  void validate() const {
    if (T < 1 || H < 1 || W < 1 || C_in < 1 || num_classes < 1)
      throw InvalidConfig("ClipSpec: zero extent");
    const std::vector<double> ps = class_periods();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i] < 4.0) throw InvalidConfig("ClipSpec: period below 4 frames");
      for (std::size_t j = i + 1; j < ps.size(); ++j)
        if (ps[i] == ps[j]) throw InvalidConfig("ClipSpec: duplicate periods");
    }
  }
};

constexpr double kPixelLo = -1.0;
constexpr double kPixelHi = 2.0;

// Gaussian blob on a smooth random trajectory, intensity modulated as
// sin(2 pi t / p_class + phi). Pure function of (spec, cls, seed).
inline std::pair<Tensor, int> generate_clip(const ClipSpec& spec,
                                            std::size_t cls,
                                            std::uint64_t seed) {
  spec.validate();
  if (cls >= spec.num_classes)
    throw InvalidClass("generate_clip: class " + std::to_string(cls) + " of " +
                       std::to_string(spec.num_classes));
  const std::vector<double> periods = spec.class_periods();
  const double p = periods[cls];
  Rng rng(seed);

  const double two_pi = 6.283185307179586476925286766559;
  const double phi = rng.next_uniform(0.0, two_pi);
  const double amp =
      spec.amplitude * rng.next_uniform(1.0 - spec.amp_jitter,
                                        1.0 + spec.amp_jitter);
  const double ax = spec.traj_radius * rng.next_uniform(0.5, 1.0);
  const double ay = spec.traj_radius * rng.next_uniform(0.5, 1.0);
  const double psi1 = rng.next_uniform(0.0, two_pi);
  const double psi2 = rng.next_uniform(0.0, two_pi);
  const double cx0 = 0.5 * static_cast<double>(spec.W - 1);
  const double cy0 = 0.5 * static_cast<double>(spec.H - 1);
  const double inv2r2 = 1.0 / (2.0 * spec.blob_radius * spec.blob_radius);

  Tensor clip(Shape{spec.C_in, spec.T, spec.H, spec.W});
  double* out = clip.data();
  for (std::size_t c = 0; c < spec.C_in; ++c) {
    for (std::size_t t = 0; t < spec.T; ++t) {
      const double tt = static_cast<double>(t);
      const double cx = cx0 + ax * std::cos(two_pi * tt / spec.T + psi1);
      const double cy = cy0 + ay * std::sin(two_pi * tt / spec.T + psi2);
      const double wave = amp * std::sin(two_pi * tt / p + phi);
      for (std::size_t y = 0; y < spec.H; ++y) {
        const double dy = static_cast<double>(y) - cy;
        for (std::size_t x = 0; x < spec.W; ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double blob = std::exp(-(dx * dx + dy * dy) * inv2r2);
          double v = spec.base + wave * blob;
          if (spec.sigma > 0.0) v += spec.sigma * rng.next_gaussian();
          *out++ = std::clamp(v, kPixelLo, kPixelHi);
        }
      }
    }
  }
  return {std::move(clip), static_cast<int>(cls)};
}

using Dataset = std::vector<std::pair<Tensor, int>>;

// n per class, class-major order, item seeds derived from the master seed by
// the splitmix counter.
inline Dataset make_dataset(const ClipSpec& spec, std::size_t n_per_class,
                            std::uint64_t seed) {
  if (n_per_class < 1) throw InvalidConfig("make_dataset: n must be >= 1");
  Dataset out;
  out.reserve(n_per_class * spec.num_classes);
  std::uint64_t index = 0;
  for (std::size_t cls = 0; cls < spec.num_classes; ++cls)
    for (std::size_t i = 0; i < n_per_class; ++i, ++index)
      out.push_back(generate_clip(spec, cls, derive_seed(seed, index)));
  return out;
}

inline std::string spec_echo(const ClipSpec& s) {
  std::ostringstream os;
  os << "T = " << s.T << "\nH = " << s.H << "\nW = " << s.W
     << "\nC_in = " << s.C_in << "\nnum_classes = " << s.num_classes
     << "\nsigma = " << s.sigma << "\namplitude = " << s.amplitude
     << "\namp_jitter = " << s.amp_jitter << "\nbase = " << s.base
     << "\nblob_radius = " << s.blob_radius
     << "\ntraj_radius = " << s.traj_radius << "\n";
  return os.str();
}

// Binary cache of one split: magic "DTFD", spec echo, then per item the label
// and raw 64-bit frames. Regeneration stays authoritative.
inline void save_dataset(const std::string& path, const ClipSpec& spec,
                         const Dataset& items) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("DTFD", 4);
  const std::string echo = spec_echo(spec);
  const std::uint64_t echo_len = echo.size();
  os.write(reinterpret_cast<const char*>(&echo_len), 8);
  os.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  const std::uint64_t count = items.size();
  os.write(reinterpret_cast<const char*>(&count), 8);
  const std::uint64_t item_len = spec.C_in * spec.T * spec.H * spec.W;
  os.write(reinterpret_cast<const char*>(&item_len), 8);
  for (const auto& [clip, label] : items) {
    const std::int64_t l = label;
    os.write(reinterpret_cast<const char*>(&l), 8);
    os.write(reinterpret_cast<const char*>(clip.data()),
             static_cast<std::streamsize>(clip.numel() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing " + path);
}

inline Dataset load_dataset(const std::string& path, const ClipSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DTFD", 4) != 0)
    throw IoError("dataset cache: bad magic in " + path);
  std::uint64_t echo_len = 0;
  is.read(reinterpret_cast<char*>(&echo_len), 8);
  std::string echo(echo_len, '\0');
  is.read(echo.data(), static_cast<std::streamsize>(echo_len));
  std::uint64_t count = 0, item_len = 0;
  is.read(reinterpret_cast<char*>(&count), 8);
  is.read(reinterpret_cast<char*>(&item_len), 8);
  if (!is || item_len != spec.C_in * spec.T * spec.H * spec.W)
    throw IoError("dataset cache: header mismatch in " + path);
  Dataset out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::int64_t label = 0;
    is.read(reinterpret_cast<char*>(&label), 8);
    std::vector<double> buf(item_len);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(item_len * sizeof(double)));
    if (!is) throw IoError("dataset cache: truncated item in " + path);
    out.emplace_back(
        Tensor(Shape{spec.C_in, spec.T, spec.H, spec.W}, std::move(buf)),
        static_cast<int>(label));
  }
  return out;
}

}  // namespace dtfnet::data
