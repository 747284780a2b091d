#pragma once

// Interpolation encoder-decoder followed by the per-element apodization
// stage. Encoder stage i takes x_{i-1} through conv, activation and 2x2
// average pooling to x_i; decoder stage j up-samples y_{j-1} (y_0 = x_5) and
// adds the input of encoder stage 6-j, so decoder stage 5 adds the cube
// itself and the stage learns a correction on top of it.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mlaforge/geometry.hpp"
#include "mlaforge/neural/ops.hpp"
#include <json.hpp>

namespace mlaforge::neural {

enum class SkipMode { additive, none };
enum class Activation { relu, identity };

inline std::string to_string(SkipMode s) { return s == SkipMode::additive ? "additive" : "none"; }
inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

struct NetConfig {
  int element_count = 32;
  int conv_layers = 10;
  int bifurcations = 5;
  int kernel_size = 3;
  int base_channels = 32;
  int max_channels = 128;
  SkipMode skip_mode = SkipMode::additive;
  Activation activation = Activation::relu;
  // false bypasses the interpolation stage: the cube goes straight to apodization
  bool interpolation_enabled = true;

  int input_channels() const { return 2 * element_count; }

  /// Channel count of x_level (level 0 is the input cube).
  int channels(int level) const {
    if (level == 0) return input_channels();
    return std::min(base_channels << (level - 1), max_channels);
  }

  /// Spatial extents must be multiples of this; inputs are padded up to it.
  std::size_t spatial_multiple() const { return std::size_t{1} << bifurcations; }

  void validate() const {
    if (element_count < 1) throw std::invalid_argument("NetConfig: element_count must be >= 1");
    if (bifurcations < 1 || bifurcations > 10) throw std::invalid_argument("NetConfig: bifurcations out of range");
    if (conv_layers != 2 * bifurcations) {
      throw std::invalid_argument("NetConfig: conv_layers must equal 2 * bifurcations (one encoder and one decoder layer per level)");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("NetConfig: kernel_size must be odd");
    if (base_channels < 1 || max_channels < base_channels) throw std::invalid_argument("NetConfig: bad channel widths");
  }

  static NetConfig tiny(int elements = 4) {
    NetConfig c;
    c.element_count = elements;
    c.bifurcations = 2;
    c.conv_layers = 4;
    c.base_channels = 4;
    c.max_channels = 8;
    return c;
  }

  bool operator==(const NetConfig&) const = default;
};

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"element_count", c.element_count}, {"conv_layers", c.conv_layers},   {"bifurcations", c.bifurcations},
          {"kernel_size", c.kernel_size},     {"base_channels", c.base_channels}, {"max_channels", c.max_channels},
          {"skip_mode", to_string(c.skip_mode)}, {"activation", to_string(c.activation)},
          {"interpolation_enabled", c.interpolation_enabled}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "element_count") c.element_count = value.get<int>();
    else if (key == "conv_layers") c.conv_layers = value.get<int>();
    else if (key == "bifurcations") c.bifurcations = value.get<int>();
    else if (key == "kernel_size") c.kernel_size = value.get<int>();
    else if (key == "base_channels") c.base_channels = value.get<int>();
    else if (key == "max_channels") c.max_channels = value.get<int>();
    else if (key == "skip_mode") {
      const auto s = value.get<std::string>();
      if (s != "additive" && s != "none") throw std::invalid_argument("NetConfig: unknown skip_mode " + s);
      c.skip_mode = s == "additive" ? SkipMode::additive : SkipMode::none;
    } else if (key == "activation") {
      const auto s = value.get<std::string>();
      if (s != "relu" && s != "identity") throw std::invalid_argument("NetConfig: unknown activation " + s);
      c.activation = s == "relu" ? Activation::relu : Activation::identity;
    } else if (key == "interpolation_enabled") c.interpolation_enabled = value.get<bool>();
    else throw std::invalid_argument("NetConfig: unknown key " + key);
  }
  c.validate();
  return c;
}

template <typename T>
struct ConvLayer {
  Tensor<T> weight, bias;
};

template <typename T>
struct NetParams {
  std::vector<ConvLayer<T>> encoder;  // weight (c_i, c_{i-1}, k, k)
  std::vector<ConvLayer<T>> decoder;  // weight (c_{6-j}, c_{5-j}, k, k), transposed-conv layout
  Tensor<T> apod_weight;              // (E)
  Tensor<T> apod_bias;                // (1)

  /// Stable traversal order used by the optimizer and serialization.
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      f("encoder." + std::to_string(i + 1) + ".weight", encoder[i].weight);
      f("encoder." + std::to_string(i + 1) + ".bias", encoder[i].bias);
    }
    for (std::size_t j = 0; j < decoder.size(); ++j) {
      f("decoder." + std::to_string(j + 1) + ".weight", decoder[j].weight);
      f("decoder." + std::to_string(j + 1) + ".bias", decoder[j].bias);
    }
    f(std::string("apodization.weight"), apod_weight);
    f(std::string("apodization.bias"), apod_bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<NetParams*>(this)->for_each([&](const std::string& name, Tensor<T>& t) { f(name, std::as_const(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Tensor<T>& t) { ok = ok && t.all_finite(); });
    return ok;
  }

  template <typename U>
  NetParams<U> cast() const {
    NetParams<U> out;
    for (const auto& l : encoder) out.encoder.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
    for (const auto& l : decoder) out.decoder.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
    out.apod_weight = apod_weight.template cast<U>();
    out.apod_bias = apod_bias.template cast<U>();
    return out;
  }

  bool operator==(const NetParams& o) const {
    auto same = [](const std::vector<ConvLayer<T>>& a, const std::vector<ConvLayer<T>>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i].weight == b[i].weight && a[i].bias == b[i].bias)) return false;
      return true;
    };
    return same(encoder, o.encoder) && same(decoder, o.decoder) && apod_weight == o.apod_weight && apod_bias == o.apod_bias;
  }
};

/// All-zero parameters with the shapes implied by cfg.
template <typename T>
NetParams<T> zero_params(const NetConfig& cfg) {
  cfg.validate();
  const auto k = static_cast<std::size_t>(cfg.kernel_size);
  const int b = cfg.bifurcations;
  NetParams<T> p;
  for (int i = 1; i <= b; ++i) {
    const auto ci = static_cast<std::size_t>(cfg.channels(i - 1)), co = static_cast<std::size_t>(cfg.channels(i));
    p.encoder.push_back({Tensor<T>({co, ci, k, k}), Tensor<T>({co})});
  }
  for (int j = 1; j <= b; ++j) {
    const auto ci = static_cast<std::size_t>(cfg.channels(b + 1 - j)), co = static_cast<std::size_t>(cfg.channels(b - j));
    p.decoder.push_back({Tensor<T>({ci, co, k, k}), Tensor<T>({co})});
  }
  p.apod_weight = Tensor<T>({static_cast<std::size_t>(cfg.element_count)});
  p.apod_bias = Tensor<T>({1});
  return p;
}

inline std::size_t parameter_count(const NetConfig& cfg) { return zero_params<float>(cfg).parameter_count(); }

struct InitOptions {
  std::uint64_t seed = 0;
  // Start the last decoder layer at zero so the untrained network passes the
  // cube through unchanged.
  bool zero_final_decoder = true;
};

/// Uniform fan-in scaled kernels, zero biases, Hann apodization and zero bias.
template <typename T>
NetParams<T> init_params(const NetConfig& cfg, const InitOptions& opt = {}) {
  auto p = zero_params<T>(cfg);
  std::mt19937_64 rng(opt.seed);
  const double k2 = static_cast<double>(cfg.kernel_size) * cfg.kernel_size;
  auto fill_uniform = [&](Tensor<T>& w, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double bound = std::sqrt(3.0 / fan_in);
    for (auto& v : w.values()) v = static_cast<T>(bound * u(rng));
  };
  for (auto& l : p.encoder) fill_uniform(l.weight, static_cast<double>(l.weight.dim(1)) * k2);
  // a stride-2 transposed conv sees on average a quarter of its taps per output
  for (auto& l : p.decoder) fill_uniform(l.weight, static_cast<double>(l.weight.dim(0)) * k2 / 4.0);
  if (opt.zero_final_decoder) p.decoder.back().weight.fill(T{});
  const auto hann = hann_window(cfg.element_count);
  for (int e = 0; e < cfg.element_count; ++e) p.apod_weight[e] = static_cast<T>(hann[e]);
  return p;
}

template <typename T>
struct ForwardCache {
  Shape input_shape;
  Tensor<T> padded;             // x_0
  std::vector<Tensor<T>> pre;   // encoder conv outputs before activation
  std::vector<Tensor<T>> enc;   // x_1 .. x_b
  std::vector<Tensor<T>> up;    // decoder up_conv outputs before activation
  std::vector<Tensor<T>> dec;   // y_1 .. y_b (padded extents)
  Tensor<T> interpolated;       // cropped interpolation output
};

namespace detail {
template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  return a == Activation::relu ? relu(x) : x;
}
template <typename T>
Tensor<T> activate_backward(const Tensor<T>& pre, const Tensor<T>& dy, Activation a) {
  return a == Activation::relu ? relu_backward(pre, dy) : dy;
}
}  // namespace detail

/// Element-wise corrected cube; output shape equals input shape.
template <typename T>
Tensor<T> interpolation_forward(const Tensor<T>& x, const NetParams<T>& p, const NetConfig& cfg,
                                ForwardCache<T>* cache = nullptr) {
  detail::require_rank4(x.shape(), "interpolation_forward");
  if (x.dim(1) != static_cast<std::size_t>(cfg.input_channels())) {
    throw std::invalid_argument("interpolation_forward: expected " + std::to_string(cfg.input_channels()) +
                                " channels, got " + shape_string(x.shape()));
  }
  if (!cfg.interpolation_enabled) {
    if (cache) cache->input_shape = x.shape();
    return x;
  }
  const std::size_t mult = cfg.spatial_multiple();
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t hp = (h + mult - 1) / mult * mult, wp = (w + mult - 1) / mult * mult;
  const auto pad = static_cast<std::size_t>(cfg.kernel_size / 2);
  const int b = cfg.bifurcations;
  const bool skip = cfg.skip_mode == SkipMode::additive;

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c = ForwardCache<T>{};
  c.input_shape = x.shape();
  c.padded = (hp == h && wp == w) ? x : reflect_pad(x, hp, wp);

  const Tensor<T>* cur = &c.padded;
  for (int i = 0; i < b; ++i) {
    c.pre.push_back(conv2d(*cur, p.encoder[i].weight, p.encoder[i].bias, 1, pad));
    c.enc.push_back(avg_pool2(detail::activate(c.pre.back(), cfg.activation)));
    cur = &c.enc.back();
  }
  for (int j = 1; j <= b; ++j) {
    c.up.push_back(up_conv2(*cur, p.decoder[j - 1].weight, p.decoder[j - 1].bias));
    Tensor<T> y = j < b ? detail::activate(c.up.back(), cfg.activation) : c.up.back();
    if (skip) y += (b - j == 0) ? c.padded : c.enc[b - j - 1];
    c.dec.push_back(std::move(y));
    cur = &c.dec.back();
  }
  Tensor<T> out = (hp == h && wp == w) ? c.dec.back() : crop(c.dec.back(), h, w);
  if (!cache) return out;
  c.interpolated = out;
  return out;
}

/// Full network: interpolation then apodization, (N, 2E, H, W) -> (N, 2, H, W).
template <typename T>
Tensor<T> model_forward(const Tensor<T>& x, const NetParams<T>& p, const NetConfig& cfg, ForwardCache<T>* cache = nullptr) {
  if (!cache) return apodization_forward(interpolation_forward(x, p, cfg), p.apod_weight, p.apod_bias);
  interpolation_forward(x, p, cfg, cache);
  return apodization_forward(cfg.interpolation_enabled ? cache->interpolated : x, p.apod_weight, p.apod_bias);
}

/// Parameter gradients of <dout, model_forward(x)>. `x` must be the input
/// used to fill `cache`.
template <typename T>
NetParams<T> model_backward(const Tensor<T>& x, const NetParams<T>& p, const NetConfig& cfg, const ForwardCache<T>& c,
                            const Tensor<T>& dout) {
  auto grads = zero_params<T>(cfg);
  const Tensor<T>& interp = cfg.interpolation_enabled ? c.interpolated : x;
  auto ga = apodization_backward(interp, p.apod_weight, dout, cfg.interpolation_enabled);
  grads.apod_weight = std::move(ga.dw);
  grads.apod_bias = std::move(ga.db);
  if (!cfg.interpolation_enabled) return grads;

  const int b = cfg.bifurcations;
  const bool skip = cfg.skip_mode == SkipMode::additive;
  const Shape padded_shape = c.padded.shape();
  Tensor<T> dy = padded_shape == c.input_shape ? std::move(ga.dx) : crop_backward(padded_shape, ga.dx);

  // gradient reaching each x_i through skips, indexed 1..b (x_0 is data)
  std::vector<Tensor<T>> dskip(b + 1);
  for (int j = b; j >= 1; --j) {
    const int src = b - j;  // skip source x_{b-j}
    if (skip && src > 0) dskip[src] = dy;
    Tensor<T> dup = j < b ? detail::activate_backward(c.up[j - 1], dy, cfg.activation) : std::move(dy);
    const Tensor<T>& in = j == 1 ? c.enc[b - 1] : c.dec[j - 2];
    auto g = up_conv2_backward(in, p.decoder[j - 1].weight, dup);
    grads.decoder[j - 1].weight = std::move(g.dw);
    grads.decoder[j - 1].bias = std::move(g.db);
    dy = std::move(g.dx);
  }
  // dy now holds the gradient at x_b from the bottleneck path
  const auto pad = static_cast<std::size_t>(cfg.kernel_size / 2);
  Tensor<T> dx = std::move(dy);
  for (int i = b; i >= 1; --i) {
    if (skip && i < b && dskip[i].size()) dx += dskip[i];
    const Tensor<T>& pre = c.pre[i - 1];
    Tensor<T> dact = avg_pool2_backward(pre.shape(), dx);
    Tensor<T> dpre = detail::activate_backward(pre, dact, cfg.activation);
    const Tensor<T>& in = i == 1 ? c.padded : c.enc[i - 2];
    auto g = conv2d_backward(in, p.encoder[i - 1].weight, dpre, 1, pad, i > 1);
    grads.encoder[i - 1].weight = std::move(g.dw);
    grads.encoder[i - 1].bias = std::move(g.db);
    dx = std::move(g.dx);
  }
  return grads;
}

}  // namespace mlaforge::neural
