#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffe/ops.hpp"

namespace diffe {

struct ModelConfig {
  std::size_t in_channels = 64;
  std::size_t time_dim = 64;
  std::size_t groups = 8;
  std::array<std::size_t, 3> ddpm_widths{32, 64, 128};
  std::array<std::size_t, 3> enc_widths{64, 128, 256};
  std::size_t dec_width = 64;
  std::size_t classes = 13;
  // 0 keeps the classifier a single affine map; a nonzero value inserts one
  // hidden layer of that width (256 -> hidden -> classes).
  std::size_t classifier_hidden = 0;

  std::size_t z_dim() const { return enc_widths[2]; }
};

enum class AblationMode { Full, NoDdpm, EncoderClassifier };

inline std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Full: return "full";
    case AblationMode::NoDdpm: return "no_ddpm";
    case AblationMode::EncoderClassifier: return "encoder_classifier";
  }
  return "full";
}

inline AblationMode ablation_mode_from_string(const std::string& s) {
  if (s == "full") return AblationMode::Full;
  if (s == "no_ddpm") return AblationMode::NoDdpm;
  if (s == "encoder_classifier") return AblationMode::EncoderClassifier;
  throw ConfigError("unknown ablation mode '" + s + "' (full | no_ddpm | encoder_classifier)");
}

// Largest divisor of `channels` that does not exceed the requested group
// count, so desk-scale widths keep working.
inline std::size_t effective_groups(std::size_t channels, std::size_t groups) {
  for (std::size_t g = std::min(groups, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

// Sinusoidal features: [sin(t*w_0..w_{h-1}), cos(t*w_0..w_{h-1})] with
// geometrically spaced frequencies.
template <typename T>
Tensor<T> time_embed(const std::vector<std::size_t>& t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("time_embed: dim must be a positive even number, got " + std::to_string(dim));
  }
  const std::size_t half = dim / 2;
  Tensor<T> out({t.size(), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      const double w =
          half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half - 1))
                   : 1.0;
      const double arg = static_cast<double>(t[b]) * w;
      out[b * dim + k] = static_cast<T>(std::sin(arg));
      out[b * dim + half + k] = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

namespace detail {

template <typename T>
Tensor<T> init_tensor(Shape shape, double stddev, Rng& rng, T fill = T(0), bool random = true) {
  Tensor<T> t(std::move(shape), fill);
  if (random) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
  }
  t.set_requires_grad(true);
  return t;
}

}  // namespace detail

// conv -> group_norm -> (optional per-channel time shift) -> elu
template <typename T>
struct ConvBlock {
  Tensor<T> w, b;
  Tensor<T> gamma, beta;
  Tensor<T> tw, tb;  // time projection, empty when the block is not conditioned
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t norm_groups = 1;

  static ConvBlock make(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                        std::size_t padding, std::size_t groups, std::size_t time_dim, Rng& rng) {
    ConvBlock blk;
    blk.stride = stride;
    blk.padding = padding;
    blk.norm_groups = effective_groups(out_ch, groups);
    const double w_std = std::sqrt(2.0 / static_cast<double>(in_ch * kernel));
    blk.w = detail::init_tensor<T>({out_ch, in_ch, kernel}, w_std, rng);
    blk.b = detail::init_tensor<T>({out_ch}, 0.0, rng, T(0), false);
    blk.gamma = detail::init_tensor<T>({out_ch}, 0.0, rng, T(1), false);
    blk.beta = detail::init_tensor<T>({out_ch}, 0.0, rng, T(0), false);
    if (time_dim > 0) {
      const double t_std = std::sqrt(1.0 / static_cast<double>(time_dim));
      blk.tw = detail::init_tensor<T>({out_ch, time_dim}, t_std, rng);
      blk.tb = detail::init_tensor<T>({out_ch}, 0.0, rng, T(0), false);
    }
    return blk;
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* emb, Tape<T>* tape) const {
    Tensor<T> h = conv1d(x, w, b, stride, padding, tape);
    h = group_norm(h, norm_groups, gamma, beta, T(1e-5), tape);
    if (emb != nullptr && tw.size() > 0) {
      h = add_channel_bias(h, affine(*emb, tw, tb, tape), tape);
    }
    return elu(h, T(1), tape);
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
    if (tw.size() > 0) {
      out.emplace_back(prefix + ".tw", tw);
      out.emplace_back(prefix + ".tb", tb);
    }
  }
};

namespace detail {
template <typename T>
void require_bcl(const Tensor<T>& x, const char* who) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(who) + ": expected [B x C x L] input, got " + shape_str(x.shape()));
  }
  if (x.dim(2) % 8 != 0) {
    throw ConfigError(std::string(who) + ": input length " + std::to_string(x.dim(2)) +
                      " must be divisible by 8 (three stride-2 stages)");
  }
}
}  // namespace detail

// Time-conditional 1-D UNet; predicts the uncorrupted signal from (x_t, t).
template <typename T>
struct DdpmNet {
  std::size_t in_channels = 0;
  std::size_t time_dim = 0;
  ConvBlock<T> d1, d2, d3, mid, u1, u2, u3;
  Tensor<T> out_w, out_b;
  mutable std::size_t forward_calls = 0;

  struct Acts {
    Tensor<T> quarter;  // u1 output @ L/4
    Tensor<T> half;     // u2 output @ L/2
    Tensor<T> full;     // u3 output @ L
  };

  static DdpmNet make(const ModelConfig& cfg, Rng& rng) {
    DdpmNet net;
    net.in_channels = cfg.in_channels;
    net.time_dim = cfg.time_dim;
    const auto w = cfg.ddpm_widths;
    net.d1 = ConvBlock<T>::make(cfg.in_channels, w[0], 3, 2, 1, cfg.groups, cfg.time_dim, rng);
    net.d2 = ConvBlock<T>::make(w[0], w[1], 3, 2, 1, cfg.groups, cfg.time_dim, rng);
    net.d3 = ConvBlock<T>::make(w[1], w[2], 3, 2, 1, cfg.groups, cfg.time_dim, rng);
    net.mid = ConvBlock<T>::make(w[2], w[2], 1, 1, 0, cfg.groups, cfg.time_dim, rng);
    net.u1 = ConvBlock<T>::make(w[2] + w[1], w[1], 3, 1, 1, cfg.groups, cfg.time_dim, rng);
    net.u2 = ConvBlock<T>::make(w[1] + w[0], w[0], 3, 1, 1, cfg.groups, cfg.time_dim, rng);
    net.u3 = ConvBlock<T>::make(w[0], w[0], 3, 1, 1, cfg.groups, cfg.time_dim, rng);
    const double o_std = std::sqrt(1.0 / static_cast<double>(w[0]));
    net.out_w = detail::init_tensor<T>({cfg.in_channels, w[0], 1}, o_std, rng);
    net.out_b = detail::init_tensor<T>({cfg.in_channels}, 0.0, rng, T(0), false);
    return net;
  }

  std::pair<Tensor<T>, Acts> forward(const Tensor<T>& x_t, const std::vector<std::size_t>& t,
                                     Tape<T>* tape = nullptr) const {
    detail::require_bcl(x_t, "ddpm_forward");
    if (x_t.dim(1) != in_channels) {
      throw DimensionError("ddpm_forward: expected " + std::to_string(in_channels) + " channels, got " +
                           std::to_string(x_t.dim(1)));
    }
    if (t.size() != x_t.dim(0)) {
      throw DimensionError("ddpm_forward: timestep vector length must equal batch size");
    }
    ++forward_calls;
    const Tensor<T> emb = time_embed<T>(t, time_dim);
    const Tensor<T> h1 = d1.forward(x_t, &emb, tape);
    const Tensor<T> h2 = d2.forward(h1, &emb, tape);
    const Tensor<T> h3 = d3.forward(h2, &emb, tape);
    const Tensor<T> m = mid.forward(h3, &emb, tape);
    Acts acts;
    acts.quarter = u1.forward(concat_channels<T>({upsample_nearest2(m, tape), h2}, tape), &emb, tape);
    acts.half = u2.forward(concat_channels<T>({upsample_nearest2(acts.quarter, tape), h1}, tape), &emb, tape);
    acts.full = u3.forward(upsample_nearest2(acts.half, tape), &emb, tape);
    Tensor<T> x_hat = conv1d(acts.full, out_w, out_b, 1, 0, tape);
    return {std::move(x_hat), std::move(acts)};
  }

  void collect(std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    d1.collect("theta.d1", out);
    d2.collect("theta.d2", out);
    d3.collect("theta.d3", out);
    mid.collect("theta.mid", out);
    u1.collect("theta.u1", out);
    u2.collect("theta.u2", out);
    u3.collect("theta.u3", out);
    out.emplace_back("theta.out.w", out_w);
    out.emplace_back("theta.out.b", out_b);
  }
};

// Three stride-2 stages, then time pooling to the latent z.
template <typename T>
struct Encoder {
  std::size_t in_channels = 0;
  ConvBlock<T> s1, s2, s3;
  mutable std::size_t forward_calls = 0;

  struct Output {
    Tensor<T> e1, e2, e3;  // stage features @ L/2, L/4, L/8
    Tensor<T> z;           // [B x z_dim]
  };

  static Encoder make(const ModelConfig& cfg, Rng& rng) {
    Encoder net;
    net.in_channels = cfg.in_channels;
    const auto w = cfg.enc_widths;
    net.s1 = ConvBlock<T>::make(cfg.in_channels, w[0], 3, 2, 1, cfg.groups, 0, rng);
    net.s2 = ConvBlock<T>::make(w[0], w[1], 3, 2, 1, cfg.groups, 0, rng);
    net.s3 = ConvBlock<T>::make(w[1], w[2], 3, 2, 1, cfg.groups, 0, rng);
    return net;
  }

  Output forward(const Tensor<T>& x0, Tape<T>* tape = nullptr) const {
    detail::require_bcl(x0, "encoder_forward");
    if (x0.dim(1) != in_channels) {
      throw DimensionError("encoder_forward: expected " + std::to_string(in_channels) +
                           " channels, got " + std::to_string(x0.dim(1)));
    }
    ++forward_calls;
    Output o;
    o.e1 = s1.forward(x0, nullptr, tape);
    o.e2 = s2.forward(o.e1, nullptr, tape);
    o.e3 = s3.forward(o.e2, nullptr, tape);
    const std::size_t batch = o.e3.dim(0), width = o.e3.dim(1);
    o.z = reshape(adaptive_avg_pool(o.e3, 1, tape), {batch, width}, tape);
    return o;
  }

  void collect(std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    s1.collect("phi.s1", out);
    s2.collect("phi.s2", out);
    s3.collect("phi.s3", out);
  }
};

// Upsampling mirror that turns the encoder's deepest feature map into a
// full-resolution error-map prediction. Skip sources depend on the mode:
// the denoiser's up-path activations in full mode, encoder stages without it.
template <typename T>
struct Decoder {
  ConvBlock<T> u1, u2, u3;
  Tensor<T> out_w, out_b;
  std::array<std::size_t, 3> skip_channels{0, 0, 0};
  bool final_signal_skip = false;  // concat x0 and x_hat before the last 1x1 conv
  std::size_t out_channels = 0;
  mutable std::size_t forward_calls = 0;

  static Decoder make(const ModelConfig& cfg, std::array<std::size_t, 3> skip_channels,
                      bool final_signal_skip, Rng& rng) {
    Decoder net;
    net.skip_channels = skip_channels;
    net.final_signal_skip = final_signal_skip;
    net.out_channels = cfg.in_channels;
    const std::size_t wd = cfg.dec_width;
    net.u1 = ConvBlock<T>::make(cfg.enc_widths[2] + skip_channels[0], wd, 3, 1, 1, cfg.groups, 0, rng);
    net.u2 = ConvBlock<T>::make(wd + skip_channels[1], wd, 3, 1, 1, cfg.groups, 0, rng);
    net.u3 = ConvBlock<T>::make(wd + skip_channels[2], wd, 3, 1, 1, cfg.groups, 0, rng);
    const std::size_t final_in = wd + (final_signal_skip ? 2 * cfg.in_channels : 0);
    const double o_std = std::sqrt(1.0 / static_cast<double>(final_in));
    net.out_w = detail::init_tensor<T>({cfg.in_channels, final_in, 1}, o_std, rng);
    net.out_b = detail::init_tensor<T>({cfg.in_channels}, 0.0, rng, T(0), false);
    return net;
  }

  Tensor<T> forward(const Tensor<T>& deep, const std::vector<Tensor<T>>& skips, const Tensor<T>* x0,
                    const Tensor<T>* x_hat, Tape<T>* tape = nullptr) const {
    ++forward_calls;
    std::size_t used = 0;
    Tensor<T> h = upsample_nearest2(deep, tape);
    h = u1.forward(attach_skip(h, skips, used, 0, tape), nullptr, tape);
    h = upsample_nearest2(h, tape);
    h = u2.forward(attach_skip(h, skips, used, 1, tape), nullptr, tape);
    h = upsample_nearest2(h, tape);
    h = u3.forward(attach_skip(h, skips, used, 2, tape), nullptr, tape);
    if (final_signal_skip) {
      if (x0 == nullptr || x_hat == nullptr) {
        throw UsageError("decoder_forward: this decoder needs x0 and x_hat for its last layer");
      }
      h = concat_channels<T>({h, *x0, *x_hat}, tape);
    }
    return conv1d(h, out_w, out_b, 1, 0, tape);
  }

  void collect(std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    u1.collect("psi.u1", out);
    u2.collect("psi.u2", out);
    u3.collect("psi.u3", out);
    out.emplace_back("psi.out.w", out_w);
    out.emplace_back("psi.out.b", out_b);
  }

 private:
  Tensor<T> attach_skip(const Tensor<T>& h, const std::vector<Tensor<T>>& skips, std::size_t& used,
                        std::size_t stage, Tape<T>* tape) const {
    if (skip_channels[stage] == 0) return h;
    if (used >= skips.size()) {
      throw ConfigError("decoder_forward: stage " + std::to_string(stage + 1) +
                        " expects a skip input but none was provided");
    }
    const Tensor<T>& s = skips[used++];
    if (s.rank() != 3 || s.dim(2) != h.dim(2) || s.dim(1) != skip_channels[stage]) {
      throw ConfigError("decoder_forward: skip resolution mismatch at stage " +
                        std::to_string(stage + 1) + ", expected [B x " +
                        std::to_string(skip_channels[stage]) + " x " + std::to_string(h.dim(2)) +
                        "], got " + shape_str(s.shape()));
    }
    return concat_channels<T>({h, s}, tape);
  }
};

// Linear read-out of the latent; optional single hidden layer.
template <typename T>
struct Classifier {
  Tensor<T> hidden_w, hidden_b;  // empty when the map is a single affine
  Tensor<T> w, b;
  std::size_t in_dim = 0;
  std::size_t classes = 0;

  static Classifier make(const ModelConfig& cfg, Rng& rng) {
    Classifier net;
    net.in_dim = cfg.z_dim();
    net.classes = cfg.classes;
    if (cfg.classifier_hidden > 0) {
      const double h_std = std::sqrt(2.0 / static_cast<double>(cfg.z_dim()));
      net.hidden_w = detail::init_tensor<T>({cfg.classifier_hidden, cfg.z_dim()}, h_std, rng);
      net.hidden_b = detail::init_tensor<T>({cfg.classifier_hidden}, 0.0, rng, T(0), false);
      const double w_std = std::sqrt(1.0 / static_cast<double>(cfg.classifier_hidden));
      net.w = detail::init_tensor<T>({cfg.classes, cfg.classifier_hidden}, w_std, rng);
    } else {
      const double w_std = std::sqrt(1.0 / static_cast<double>(cfg.z_dim()));
      net.w = detail::init_tensor<T>({cfg.classes, cfg.z_dim()}, w_std, rng);
    }
    net.b = detail::init_tensor<T>({cfg.classes}, 0.0, rng, T(0), false);
    return net;
  }

  Tensor<T> forward(const Tensor<T>& z, Tape<T>* tape = nullptr) const {
    if (z.rank() != 2 || z.dim(1) != in_dim) {
      throw DimensionError("classify: expected [B x " + std::to_string(in_dim) + "] latent, got " +
                           shape_str(z.shape()));
    }
    if (hidden_w.size() > 0) {
      Tensor<T> h = elu(affine(z, hidden_w, hidden_b, tape), T(1), tape);
      return affine(h, w, b, tape);
    }
    return affine(z, w, b, tape);
  }

  void collect(std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    if (hidden_w.size() > 0) {
      out.emplace_back("rho.hidden.w", hidden_w);
      out.emplace_back("rho.hidden.b", hidden_b);
    }
    out.emplace_back("rho.w", w);
    out.emplace_back("rho.b", b);
  }
};

template <typename T>
Tensor<T> classify(const Tensor<T>& z, const Classifier<T>& rho, Tape<T>* tape = nullptr) {
  return rho.forward(z, tape);
}

struct ParamCounts {
  std::size_t theta = 0;
  std::size_t phi = 0;
  std::size_t psi = 0;
  std::size_t rho = 0;
  std::size_t total() const { return theta + phi + psi + rho; }
  std::size_t networks_combined() const { return theta + phi + psi; }
};

// Parameters of all networks one run needs. Which networks exist depends on
// the ablation mode.
template <typename T>
struct ModelBundle {
  ModelConfig config;
  AblationMode mode = AblationMode::Full;
  std::optional<DdpmNet<T>> theta;
  Encoder<T> phi;
  std::optional<Decoder<T>> psi;
  Classifier<T> rho;

  static ModelBundle init(const ModelConfig& cfg, AblationMode mode, std::uint64_t seed) {
    ModelBundle b;
    b.config = cfg;
    b.mode = mode;
    if (mode == AblationMode::Full) {
      Rng rng_t(seed, "init.theta");
      b.theta = DdpmNet<T>::make(cfg, rng_t);
    }
    Rng rng_p(seed, "init.phi");
    b.phi = Encoder<T>::make(cfg, rng_p);
    if (mode == AblationMode::Full) {
      Rng rng_s(seed, "init.psi");
      b.psi = Decoder<T>::make(cfg, {cfg.ddpm_widths[1], cfg.ddpm_widths[0], cfg.ddpm_widths[0]},
                               true, rng_s);
    } else if (mode == AblationMode::NoDdpm) {
      Rng rng_s(seed, "init.psi");
      b.psi = Decoder<T>::make(cfg, {cfg.enc_widths[1], cfg.enc_widths[0], 0}, false, rng_s);
    }
    Rng rng_r(seed, "init.rho");
    b.rho = Classifier<T>::make(cfg, rng_r);
    return b;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    if (theta) theta->collect(out);
    phi.collect(out);
    if (psi) psi->collect(out);
    rho.collect(out);
    return out;
  }

  std::vector<Tensor<T>> theta_params() const {
    std::vector<std::pair<std::string, Tensor<T>>> named;
    if (theta) theta->collect(named);
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named) out.push_back(t);
    return out;
  }

  // encoder + decoder + classifier: everything the joint objective updates
  std::vector<Tensor<T>> cae_params() const {
    std::vector<std::pair<std::string, Tensor<T>>> named;
    phi.collect(named);
    if (psi) psi->collect(named);
    rho.collect(named);
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named) out.push_back(t);
    return out;
  }

  ParamCounts param_count() const {
    ParamCounts c;
    for (auto& [name, t] : named_params()) {
      if (name.rfind("theta.", 0) == 0) c.theta += t.size();
      else if (name.rfind("phi.", 0) == 0) c.phi += t.size();
      else if (name.rfind("psi.", 0) == 0) c.psi += t.size();
      else c.rho += t.size();
    }
    return c;
  }

  void zero_grad() const {
    for (auto& [name, t] : named_params()) {
      Tensor<T> tt = t;
      tt.clear_grad();
    }
  }

  ModelBundle clone() const {
    ModelBundle copy = init(config, mode, 0);
    auto src = named_params();
    auto dst = copy.named_params();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i].second.values() = src[i].second.values();
    }
    return copy;
  }

  void reset_call_counters() const {
    if (theta) theta->forward_calls = 0;
    phi.forward_calls = 0;
    if (psi) psi->forward_calls = 0;
  }
};

template <typename T>
ParamCounts param_count(const ModelBundle<T>& bundle) {
  return bundle.param_count();
}

}  // namespace diffe
