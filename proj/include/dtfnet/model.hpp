#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dtfnet/autograd.hpp"
#include "dtfnet/dtf.hpp"
#include "dtfnet/error.hpp"
#include "dtfnet/fa.hpp"
#include "dtfnet/fft.hpp"
#include "dtfnet/nn.hpp"
#include "dtfnet/rng.hpp"
#include "dtfnet/tensor.hpp"

namespace dtfnet::model {

enum class Variant { none, dtf_1d, dtf_1d_plus, dtf_f, dtf };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::dtf_1d: return "dtf_1d";
    case Variant::dtf_1d_plus: return "dtf_1d_plus";
    case Variant::dtf_f: return "dtf_f";
    case Variant::dtf: return "dtf";
  }
  return "none";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "none") return Variant::none;
  if (s == "dtf_1d") return Variant::dtf_1d;
  if (s == "dtf_1d_plus") return Variant::dtf_1d_plus;
  if (s == "dtf_f") return Variant::dtf_f;
  if (s == "dtf") return Variant::dtf;
  throw ConfigError("unknown variant: " + s);
}

// Three stages of one residual block each, downsampled by 2 between stages.
// Sized so that CPU training of the synthetic task finishes in minutes.
struct ModelConfig {
  std::vector<std::size_t> channels{8, 16, 32};
  std::vector<std::size_t> blocks{1, 1, 1};
  Variant variant = Variant::dtf;
  std::vector<std::size_t> variant_stages{};  // empty = all stages
  std::size_t T = 16;
  std::size_t k = 3;
  std::size_t G = 16;
  std::size_t num_classes = 4;
  std::size_t in_channels = 1;
  std::size_t H = 8;
  std::size_t W = 8;
  dtf::FilterInit filter_init = dtf::FilterInit::identity;

  std::size_t num_stages() const { return channels.size(); }

  // G clamped per stage so tiny stages keep a valid grouping.
  std::size_t group_for(std::size_t C) const { return std::min(G, C); }

  bool stage_has_variant(std::size_t s) const {
    if (variant == Variant::none) return false;
    if (variant_stages.empty()) return true;
    return std::find(variant_stages.begin(), variant_stages.end(), s) !=
           variant_stages.end();
  }

  std::size_t stage_height(std::size_t s) const {
    std::size_t h = H;
    for (std::size_t i = 0; i < s; ++i) h = (h - 1) / 2 + 1;
    return h;
  }
  std::size_t stage_width(std::size_t s) const {
    std::size_t w = W;
    for (std::size_t i = 0; i < s; ++i) w = (w - 1) / 2 + 1;
    return w;
  }

  void validate() const {
    if (channels.empty() || channels.size() != blocks.size())
      throw InvalidConfig("model: channels/blocks must be non-empty and match");
    if (k % 2 == 0 || k == 0) throw InvalidConfig("model: k must be odd");
    if (T < 1) throw InvalidConfig("model: T must be at least 1");
    if (num_classes < 2) throw InvalidConfig("model: need at least 2 classes");
    if (G == 0) throw InvalidConfig("model: G must be positive");
    for (std::size_t c : channels) {
      if (c == 0) throw InvalidConfig("model: zero-channel stage");
      if (c % group_for(c) != 0)
        throw InvalidConfig("model: clamped G does not divide stage channels " +
                            std::to_string(c));
    }
    for (std::size_t b : blocks)
      if (b == 0) throw InvalidConfig("model: zero-block stage");
    for (std::size_t s : variant_stages)
      if (s >= channels.size())
        throw InvalidConfig("model: variant stage out of range");
  }
};

namespace detail {

inline Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = rng.next_uniform(-bound, bound);
  return t;
}

}  // namespace detail

// Deterministic initialization from (cfg, seed): conv/linear weights uniform
// in +-1/sqrt(fan-in), biases zero, norm gains one, filter estimators per
// their identity/zero init.
inline ParamStore build_net(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore params;
  Rng rng(seed);
  const std::size_t M = fft::spectrum_size(cfg.T);
  const std::size_t K2 = cfg.k * cfg.k;

  params.add("stem.conv.weight",
             detail::uniform_init({cfg.channels[0], cfg.in_channels, 3, 3},
                                  cfg.in_channels * 9, rng));
  params.add("stem.conv.bias", Tensor(Shape{cfg.channels[0]}));
  params.add("stem.norm.gain", Tensor::full({cfg.channels[0]}, 1.0));

  std::size_t blk = 0;
  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    const std::size_t C = cfg.channels[s];
    const std::size_t G = cfg.group_for(C);
    const std::size_t R = C / G;
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b, ++blk) {
      const std::string p = "block" + std::to_string(blk) + ".";
      params.add(p + "conv.weight",
                 detail::uniform_init({C, C, 3, 3}, C * 9, rng));
      params.add(p + "conv.bias", Tensor(Shape{C}));
      params.add(p + "norm.gain", Tensor::full({C}, 1.0));
      if (!cfg.stage_has_variant(s)) continue;
      switch (cfg.variant) {
        case Variant::none:
          break;
        case Variant::dtf_1d:
          params.add(p + "tconv.weight", detail::uniform_init({C, 3}, 3, rng));
          params.add(p + "tconv.bias", Tensor(Shape{C}));
          break;
        case Variant::dtf_1d_plus: {
          // Predicts R x 3 taps per location from the C x T slice;
          // identity-initialized at the center tap.
          Tensor w(Shape{R * 3, C * cfg.T});
          for (std::size_t i = 0; i < w.numel(); ++i)
            w[i] = 1e-3 * rng.next_gaussian();
          Tensor bias(Shape{R * 3});
          if (cfg.filter_init == dtf::FilterInit::identity)
            for (std::size_t r = 0; r < R; ++r) bias[r * 3 + 1] = 1.0;
          params.add(p + "kpred.weight", std::move(w));
          params.add(p + "kpred.bias", std::move(bias));
          break;
        }
        case Variant::dtf_f: {
          Tensor re(Shape{C, M});
          if (cfg.filter_init == dtf::FilterInit::identity)
            for (std::size_t i = 0; i < re.numel(); ++i) re[i] = 1.0;
          params.add(p + "filter.re", std::move(re));
          params.add(p + "filter.im", Tensor(Shape{C, M}));
          break;
        }
        case Variant::dtf: {
          dtf::FilterEstimator est = dtf::make_filter_estimator(
              C, G, cfg.T, cfg.k, cfg.filter_init, rng);
          params.add(p + "est.weight", std::move(est.weight));
          params.add(p + "est.bias", std::move(est.bias));
          break;
        }
      }
    }
    if (s + 1 < cfg.num_stages()) {
      const std::string p = "down" + std::to_string(s) + ".";
      params.add(p + "conv.weight",
                 detail::uniform_init({cfg.channels[s + 1], C, 3, 3}, C * 9,
                                      rng));
      params.add(p + "conv.bias", Tensor(Shape{cfg.channels[s + 1]}));
      params.add(p + "norm.gain", Tensor::full({cfg.channels[s + 1]}, 1.0));
    }
  }
  params.add("head.weight",
             detail::uniform_init({cfg.num_classes, cfg.channels.back()},
                                  cfg.channels.back(), rng));
  params.add("head.bias", Tensor(Shape{cfg.num_classes}));
  (void)K2;
  return params;
}

// Tape handles for every parameter, keyed by name.
struct VarStore {
  std::map<std::string, Var> vars;
  std::map<int, std::string> names;

  Var at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end())
      throw InvalidConfig("VarStore: missing parameter " + name);
    return it->second;
  }
};

inline VarStore lift_params(Tape& t, const ParamStore& params,
                            bool requires_grad = true) {
  VarStore out;
  for (const auto& [name, value] : params.items()) {
    Var v = t.leaf(value, requires_grad);
    out.vars.emplace(name, v);
    out.names.emplace(v.id, name);
  }
  return out;
}

// Captures intermediates of one forward pass for probing/export.
struct ForwardProbe {
  int capture_block = -1;       // global block index whose S_c to keep
  ops::ComplexVar filter{};     // captured expanded filter planes
  bool has_filter = false;
  Var prepool{};                // features entering global pooling
  bool freeze_norm_stats = false;  // receptive-field probing mode
};

// Residual block: y = x + Path(x) with
// Path = conv3x3 -> rms norm -> relu -> [variant temporal op].
inline Var block_forward(Tape& t, Var x, const VarStore& vars,
                         std::size_t blk, const ModelConfig& cfg,
                         std::size_t stage, ForwardProbe* probe = nullptr) {
  const std::string p = "block" + std::to_string(blk) + ".";
  const Tensor& xv = t.val(x);
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), H = xv.dim(3),
                    W = xv.dim(4);
  Var path = ops::conv2d(t, x, vars.at(p + "conv.weight"),
                         vars.at(p + "conv.bias"), 1);
  path = ops::rms_channel_norm(t, path, vars.at(p + "norm.gain"),
                               probe && probe->freeze_norm_stats);
  path = ops::relu(t, path);

  if (cfg.stage_has_variant(stage)) {
    switch (cfg.variant) {
      case Variant::none:
        break;
      case Variant::dtf_1d:
        path = ops::conv1d_temporal(t, path, vars.at(p + "tconv.weight"),
                                    vars.at(p + "tconv.bias"));
        break;
      case Variant::dtf_1d_plus: {
        const std::size_t G = cfg.group_for(C);
        const std::size_t R = C / G;
        Var perm = ops::permute(t, path, {0, 3, 4, 1, 2});
        Var flat = ops::reshape(t, perm, {N * H * W, C * T});
        Var taps = ops::linear(t, flat, vars.at(p + "kpred.weight"),
                               vars.at(p + "kpred.bias"));
        Var taps5 = ops::permute(t, ops::reshape(t, taps, {N, H, W, R, 3}),
                                 {0, 3, 4, 1, 2});
        path = ops::dynamic_conv1d(t, path, taps5, G);
        break;
      }
      case Variant::dtf_f: {
        ops::ComplexVar spec = ops::rfft_time(t, path);
        ops::ComplexVar filt{
            ops::broadcast_filter(t, vars.at(p + "filter.re"), N, H, W),
            ops::broadcast_filter(t, vars.at(p + "filter.im"), N, H, W)};
        ops::ComplexVar mod = ops::complex_mul(t, spec, filt);
        Var f_prime = ops::irfft_time(t, mod, T);
        path = ops::add(t, path, f_prime);
        break;
      }
      case Variant::dtf: {
        fa::Aggregated agg = fa::frame_aggregate_var(t, path, cfg.k);
        dtf::MechanismOut mech = dtf::dtf_mechanism_forward_var(
            t, agg.enhanced, agg.correlation, vars.at(p + "est.weight"),
            vars.at(p + "est.bias"), cfg.group_for(C));
        if (probe && probe->capture_block == static_cast<int>(blk)) {
          probe->filter = mech.filter;
          probe->has_filter = true;
        }
        path = mech.out;
        break;
      }
    }
  }
  return ops::add(t, x, path);
}

// Stem conv, stages of residual blocks with stride-2 downsampling between
// stages, global pooling, linear head.
inline Var net_forward(Tape& t, const VarStore& vars, Var clip,
                       const ModelConfig& cfg, ForwardProbe* probe = nullptr) {
  const Tensor& cv = t.val(clip);
  if (cv.rank() != 5 || cv.dim(1) != cfg.in_channels || cv.dim(2) != cfg.T ||
      cv.dim(3) != cfg.H || cv.dim(4) != cfg.W)
    throw ShapeMismatch("net_forward: clip " + shape_str(cv.shape()) +
                        " does not match the configuration");
  Var x = ops::conv2d(t, clip, vars.at("stem.conv.weight"),
                      vars.at("stem.conv.bias"), 1);
  x = ops::rms_channel_norm(t, x, vars.at("stem.norm.gain"),
                            probe && probe->freeze_norm_stats);
  x = ops::relu(t, x);

  std::size_t blk = 0;
  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b, ++blk)
      x = block_forward(t, x, vars, blk, cfg, s, probe);
    if (s + 1 < cfg.num_stages()) {
      const std::string p = "down" + std::to_string(s) + ".";
      x = ops::conv2d(t, x, vars.at(p + "conv.weight"), vars.at(p + "conv.bias"),
                      2);
      x = ops::rms_channel_norm(t, x, vars.at(p + "norm.gain"),
                                probe && probe->freeze_norm_stats);
      x = ops::relu(t, x);
    }
  }
  if (probe) probe->prepool = x;
  Var pooled = ops::global_avg_pool(t, x);
  return ops::linear(t, pooled, vars.at("head.weight"), vars.at("head.bias"));
}

// Analytic multiply-accumulate count for one clip forward. Rough, pooled
// over the dominant terms; not validated against any published numbers.
inline std::size_t count_flops(const ModelConfig& cfg) {
  std::size_t macs = 0;
  const std::size_t M = fft::spectrum_size(cfg.T);
  const std::size_t K2 = cfg.k * cfg.k;
  std::size_t h = cfg.H, w = cfg.W;
  macs += cfg.channels[0] * h * w * cfg.T * cfg.in_channels * 9;  // stem
  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    const std::size_t C = cfg.channels[s];
    const std::size_t G = cfg.group_for(C);
    const std::size_t R = C / G;
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
      macs += C * h * w * cfg.T * C * 9;  // block conv
      macs += 2 * C * h * w * cfg.T;      // norm
      if (!cfg.stage_has_variant(s)) continue;
      switch (cfg.variant) {
        case Variant::none:
          break;
        case Variant::dtf_1d:
          macs += C * h * w * cfg.T * 3;
          break;
        case Variant::dtf_1d_plus:
          macs += h * w * (C * cfg.T) * (R * 3) + C * h * w * cfg.T * 3;
          break;
        case Variant::dtf_f:
          macs += C * h * w * (2 * cfg.T * M + 4 * M);
          break;
        case Variant::dtf:
          macs += C * h * w * cfg.T * K2 * 2;                    // aggregation
          macs += h * w * ((C + K2) * cfg.T) * (2 * R * M);      // estimator
          macs += C * h * w * (2 * cfg.T * M + 4 * M);           // fft + modulate
          break;
      }
    }
    if (s + 1 < cfg.num_stages()) {
      h = (h - 1) / 2 + 1;
      w = (w - 1) / 2 + 1;
      macs += cfg.channels[s + 1] * h * w * cfg.T * C * 9;
    }
  }
  macs += cfg.channels.back() * cfg.num_classes;
  return macs;
}

// ---------------------------------------------------------------------------
// Config echo and checkpoint file format.
// ---------------------------------------------------------------------------

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

inline std::string config_echo(const ModelConfig& cfg) {
  std::string out;
  out += "channels = " + join_sizes(cfg.channels) + "\n";
  out += "blocks = " + join_sizes(cfg.blocks) + "\n";
  out += "variant = " + std::string(variant_name(cfg.variant)) + "\n";
  out += "variant_stages = " + join_sizes(cfg.variant_stages) + "\n";
  out += "T = " + std::to_string(cfg.T) + "\n";
  out += "k = " + std::to_string(cfg.k) + "\n";
  out += "G = " + std::to_string(cfg.G) + "\n";
  out += "num_classes = " + std::to_string(cfg.num_classes) + "\n";
  out += "in_channels = " + std::to_string(cfg.in_channels) + "\n";
  out += "H = " + std::to_string(cfg.H) + "\n";
  out += "W = " + std::to_string(cfg.W) + "\n";
  out += std::string("filter_init = ") +
         (cfg.filter_init == dtf::FilterInit::identity ? "identity" : "zero") +
         "\n";
  return out;
}

inline ModelConfig config_from_echo(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      const std::size_t b = s.find_first_not_of(ws);
      if (b == std::string::npos) return std::string();
      const std::size_t e = s.find_last_not_of(ws);
      return s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "channels") cfg.channels = parse_sizes(val);
      else if (key == "blocks") cfg.blocks = parse_sizes(val);
      else if (key == "variant") cfg.variant = variant_from_string(val);
      else if (key == "variant_stages") cfg.variant_stages = parse_sizes(val);
      else if (key == "T") cfg.T = std::stoull(val);
      else if (key == "k") cfg.k = std::stoull(val);
      else if (key == "G") cfg.G = std::stoull(val);
      else if (key == "num_classes") cfg.num_classes = std::stoull(val);
      else if (key == "in_channels") cfg.in_channels = std::stoull(val);
      else if (key == "H") cfg.H = std::stoull(val);
      else if (key == "W") cfg.W = std::stoull(val);
      else if (key == "filter_init")
        cfg.filter_init = val == "zero" ? dtf::FilterInit::zero
                                        : dtf::FilterInit::identity;
    } catch (const std::exception&) {
      throw ConfigError("bad config value for " + key + ": " + val);
    }
  }
  return cfg;
}

namespace detail {

constexpr char kMagic[4] = {'D', 'T', 'F', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointCorrupt("checkpoint: truncated file");
  return v;
}

}  // namespace detail

struct Checkpoint {
  ParamStore params;
  std::string config_echo;
};

// Layout: magic "DTF1", u32 version, u64 config length + UTF-8 key=value
// echo, u64 parameter count, then per parameter (sorted by name) the name,
// rank, extents and raw little-endian doubles.
inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const std::string& config_echo) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(detail::kMagic, 4);
  detail::write_pod<std::uint32_t>(os, detail::kVersion);
  detail::write_pod<std::uint64_t>(os, config_echo.size());
  os.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
  detail::write_pod<std::uint64_t>(os, params.items().size());
  for (const auto& [name, t] : params.items()) {
    detail::write_pod<std::uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint64_t>(os, t.rank());
    for (std::size_t d : t.shape())
      detail::write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kMagic, 4) != 0)
    throw CheckpointCorrupt("checkpoint: bad magic");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kVersion)
    throw CheckpointCorrupt("checkpoint: unsupported version " +
                            std::to_string(version));
  const auto cfg_len = detail::read_pod<std::uint64_t>(is);
  if (cfg_len > (1u << 20)) throw CheckpointCorrupt("checkpoint: config too large");
  std::string echo(cfg_len, '\0');
  is.read(echo.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw CheckpointCorrupt("checkpoint: truncated config echo");
  const auto nparams = detail::read_pod<std::uint64_t>(is);
  if (nparams > (1u << 20)) throw CheckpointCorrupt("checkpoint: too many parameters");
  Checkpoint out;
  out.config_echo = std::move(echo);
  for (std::uint64_t i = 0; i < nparams; ++i) {
    const auto name_len = detail::read_pod<std::uint64_t>(is);
    if (name_len > (1u << 12)) throw CheckpointCorrupt("checkpoint: bad name");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw CheckpointCorrupt("checkpoint: truncated name");
    const auto rank = detail::read_pod<std::uint64_t>(is);
    if (rank > 8) throw CheckpointCorrupt("checkpoint: bad rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
      numel *= shape[d];
    }
    if (numel > (1u << 28)) throw CheckpointCorrupt("checkpoint: tensor too large");
    std::vector<double> data(numel);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw CheckpointCorrupt("checkpoint: truncated tensor data");
    out.params.add(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

// Max |d sum(features[:, :, frame_out, :, :]) / d clip[:, :, frame_in, :, :]|
// where `features` is the map entering global pooling. Probes the temporal
// receptive field: a 3-tap temporal block cannot connect frames further than
// one step apart per block, a frequency filter spans the whole clip.
inline double frame_sensitivity(const ParamStore& params,
                                const ModelConfig& cfg, const Tensor& clip,
                                std::size_t frame_out, std::size_t frame_in) {
  Tape t;
  VarStore vars = lift_params(t, params, false);
  Tensor batch = tensor_reshape(
      clip, {1, clip.dim(0), clip.dim(1), clip.dim(2), clip.dim(3)});
  Var input = t.leaf(batch, true);
  ForwardProbe probe;
  probe.freeze_norm_stats = true;
  net_forward(t, vars, input, cfg, &probe);
  const Tensor& feat = t.val(probe.prepool);
  Tensor mask(feat.shape());
  const std::size_t C = feat.dim(1), T = feat.dim(2),
                    HW = feat.dim(3) * feat.dim(4);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i)
      mask[(c * T + frame_out) * HW + i] = 1.0;
  Var loss = ops::sum_all(t, ops::mul(t, probe.prepool, t.constant(mask)));
  t.backward(loss);
  const Tensor& g = t.grad(input);
  const std::size_t Ci = g.dim(1), Ti = g.dim(2),
                    HWi = g.dim(3) * g.dim(4);
  double mx = 0.0;
  for (std::size_t c = 0; c < Ci; ++c)
    for (std::size_t i = 0; i < HWi; ++i)
      mx = std::max(mx, std::fabs(g[(c * Ti + frame_in) * HWi + i]));
  return mx;
}

// Expanded per-location filters S_c of one dtf block on one clip:
// (re, im) planes of shape C x M x H' x W' for sample 0.
inline std::pair<Tensor, Tensor> probe_filters(const ParamStore& params,
                                               const ModelConfig& cfg,
                                               const Tensor& clip,
                                               int block_index) {
  if (cfg.variant != Variant::dtf)
    throw VariantMismatch("probe_filters: checkpoint has no dynamic filters");
  Tape t;
  VarStore vars = lift_params(t, params, false);
  Tensor batch = tensor_reshape(
      clip, {1, clip.dim(0), clip.dim(1), clip.dim(2), clip.dim(3)});
  ForwardProbe probe;
  probe.capture_block = block_index;
  net_forward(t, vars, t.constant(batch), cfg, &probe);
  if (!probe.has_filter)
    throw VariantMismatch("probe_filters: block " + std::to_string(block_index) +
                          " produced no filter");
  const Tensor& re = t.val(probe.filter.re);
  const Tensor& im = t.val(probe.filter.im);
  Shape s{re.dim(1), re.dim(2), re.dim(3), re.dim(4)};
  Tensor re_out(s), im_out(s);
  for (std::size_t i = 0; i < re_out.numel(); ++i) {
    re_out[i] = re[i];
    im_out[i] = im[i];
  }
  return {re_out, im_out};
}

}  // namespace dtfnet::model
