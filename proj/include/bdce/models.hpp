#pragma once

#include <string>
#include <vector>

#include "bdce/image.hpp"
#include "bdce/layers.hpp"
#include "bdce/params.hpp"

namespace bdce {

struct CurveNetSpec {
  std::size_t width = 32;
};

struct NoiseNetSpec {
  std::size_t width = 32;
};

struct DenoiserSpec {
  std::size_t width = 16;
  std::size_t blocks = 3;
};

/// Architecture of the three networks plus the fixed internal resolution.
struct ModelSpec {
  CurveNetSpec curve;
  NoiseNetSpec noise;
  DenoiserSpec denoise;
  std::size_t low_res = 256;
};

namespace detail {

/// Indices of one conv layer's weight and bias inside a ParamStore.
struct ConvLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

template <typename T>
ConvLayer add_conv(ParamStore<T>& p, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k = 3,
                   std::size_t stride = 1) {
  ConvLayer l;
  l.weight = p.add(name + ".weight", {cout, cin, k, k});
  l.bias = p.add(name + ".bias", {cout});
  l.stride = stride;
  l.padding = k / 2;
  return l;
}

template <typename T>
Tensor<T> conv(const ParamStore<T>& p, const ConvLayer& l, const Tensor<T>& x) {
  return conv2d_forward(x, p.value(l.weight), p.value(l.bias), l.stride, l.padding);
}

/// Accumulates the layer's parameter gradients and returns the input gradient.
template <typename T>
Tensor<T> conv_back(ParamStore<T>& p, const ConvLayer& l, const Tensor<T>& grad_out, const Tensor<T>& saved_in,
                    bool need_input = true) {
  auto g = conv2d_backward(grad_out, saved_in, p.value(l.weight), l.stride, l.padding, need_input);
  p.accumulate_grad(l.weight, g.grad_weight);
  p.accumulate_grad(l.bias, g.grad_bias);
  return std::move(g.grad_input);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split2(const Tensor<T>& g, std::size_t first) {
  return {slice_channels(g, 0, first), slice_channels(g, first, g.channels() - first)};
}

}  // namespace detail

/// Curve estimator: seven 3x3 conv layers with symmetric skip concatenations
/// and a tanh head producing 24 curve planes.
template <typename T>
class CurveNet {
 public:
  explicit CurveNet(CurveNetSpec spec = {}) : spec_(spec) {
    build(proto_);
  }

  const CurveNetSpec& spec() const { return spec_; }

  /// Zero-valued parameter store laid out for this network.
  ParamStore<T> make_params() const { return proto_; }

  struct Cache {
    Tensor<T> in, x1, x2, x3, x4, x5, x6, cat34, cat25, cat16, out;
  };

  Tensor<T> forward(const ParamStore<T>& p, const Tensor<T>& low, Cache* cache = nullptr) const {
    require_image(low, "curve estimator input");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.in = low;
    c.x1 = activation_forward(detail::conv(p, l_[0], low), Activation::relu);
    c.x2 = activation_forward(detail::conv(p, l_[1], c.x1), Activation::relu);
    c.x3 = activation_forward(detail::conv(p, l_[2], c.x2), Activation::relu);
    c.x4 = activation_forward(detail::conv(p, l_[3], c.x3), Activation::relu);
    c.cat34 = concat_channels({&c.x3, &c.x4});
    c.x5 = activation_forward(detail::conv(p, l_[4], c.cat34), Activation::relu);
    c.cat25 = concat_channels({&c.x2, &c.x5});
    c.x6 = activation_forward(detail::conv(p, l_[5], c.cat25), Activation::relu);
    c.cat16 = concat_channels({&c.x1, &c.x6});
    c.out = activation_forward(detail::conv(p, l_[6], c.cat16), Activation::tanh);
    return c.out;
  }

  /// Backpropagates d(loss)/d(curves); returns d(loss)/d(input) when requested.
  Tensor<T> backward(ParamStore<T>& p, const Tensor<T>& grad_out, const Cache& c, bool need_input = false) const {
    const std::size_t w = spec_.width;
    auto g = activation_backward(grad_out, c.out, Activation::tanh);
    auto [g1a, g6] = detail::split2(detail::conv_back(p, l_[6], g, c.cat16), w);
    g6 = activation_backward(std::move(g6), c.x6, Activation::relu);
    auto [g2a, g5] = detail::split2(detail::conv_back(p, l_[5], g6, c.cat25), w);
    g5 = activation_backward(std::move(g5), c.x5, Activation::relu);
    auto [g3a, g4] = detail::split2(detail::conv_back(p, l_[4], g5, c.cat34), w);
    g4 = activation_backward(std::move(g4), c.x4, Activation::relu);
    auto g3 = detail::conv_back(p, l_[3], g4, c.x3) + g3a;
    g3 = activation_backward(std::move(g3), c.x3, Activation::relu);
    auto g2 = detail::conv_back(p, l_[2], g3, c.x2) + g2a;
    g2 = activation_backward(std::move(g2), c.x2, Activation::relu);
    auto g1 = detail::conv_back(p, l_[1], g2, c.x1) + g1a;
    g1 = activation_backward(std::move(g1), c.x1, Activation::relu);
    return detail::conv_back(p, l_[0], g1, c.in, need_input);
  }

  /// Index of the output layer's weight (zeroing it and its bias gives identity curves).
  std::pair<std::size_t, std::size_t> head() const { return {l_[6].weight, l_[6].bias}; }

 private:
  void build(ParamStore<T>& p) {
    const std::size_t w = spec_.width;
    require(w >= 1, "curve estimator width must be positive");
    l_.clear();
    l_.push_back(detail::add_conv(p, "conv1", 3, w));
    l_.push_back(detail::add_conv(p, "conv2", w, w));
    l_.push_back(detail::add_conv(p, "conv3", w, w));
    l_.push_back(detail::add_conv(p, "conv4", w, w));
    l_.push_back(detail::add_conv(p, "conv5", 2 * w, w));
    l_.push_back(detail::add_conv(p, "conv6", 2 * w, w));
    l_.push_back(detail::add_conv(p, "conv7", 2 * w, kCurveChannels));
  }

  CurveNetSpec spec_;
  ParamStore<T> proto_;
  std::vector<detail::ConvLayer> l_;
};

inline constexpr std::size_t kNoiseNetInputChannels = kCurveChannels + 3 + kCurveChannels;

/// Conditional noise predictor: a two-level U-Net over the concatenation
/// (x_t, low-res image, initial curves) with an additive timestep embedding
/// at the bottleneck.
template <typename T>
class NoiseNet {
 public:
  explicit NoiseNet(NoiseNetSpec spec = {}) : spec_(spec) {
    build(proto_);
  }

  const NoiseNetSpec& spec() const { return spec_; }
  std::size_t embed_dim() const { return 2 * spec_.width; }

  /// Zero-valued parameter store laid out for this network.
  ParamStore<T> make_params() const { return proto_; }

  struct Cache {
    Tensor<T> in, h0, h1, h2, emb, b_in, b, u1_in, u1, u0_in, u0;
  };

  Tensor<T> forward(const ParamStore<T>& p, const Tensor<T>& x_t, const Tensor<T>& low, const Tensor<T>& cond,
                    int t, int total_steps, Cache* cache = nullptr) const {
    require_curves(x_t, "noise net x_t");
    require_image(low, "noise net image condition");
    require_curves(cond, "noise net curve condition");
    require(x_t.height() == low.height() && x_t.width() == low.width() && x_t.dims() == cond.dims(),
            "noise net: inputs disagree in spatial size");
    require(x_t.height() % 4 == 0 && x_t.width() % 4 == 0, "noise net: spatial size must be a multiple of 4");
    require(t >= 1 && t <= total_steps, "noise net: timestep " + std::to_string(t) + " outside [1, " +
                                            std::to_string(total_steps) + "]");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.in = concat_channels({&x_t, &low, &cond});
    c.h0 = activation_forward(detail::conv(p, in_, c.in), Activation::relu);
    c.h1 = activation_forward(detail::conv(p, down1_, c.h0), Activation::relu);
    c.h2 = activation_forward(detail::conv(p, down2_, c.h1), Activation::relu);
    c.emb = time_embedding<T>(t, embed_dim(), total_steps);
    c.b_in = c.h2;
    add_channel_broadcast(c.b_in, detail::conv(p, time_, c.emb));
    c.b = activation_forward(detail::conv(p, mid_, c.b_in), Activation::relu);
    const auto up_b = upsample_nearest2_forward(c.b);
    c.u1_in = concat_channels({&up_b, &c.h1});
    c.u1 = activation_forward(detail::conv(p, up1_, c.u1_in), Activation::relu);
    const auto up_u1 = upsample_nearest2_forward(c.u1);
    c.u0_in = concat_channels({&up_u1, &c.h0});
    c.u0 = activation_forward(detail::conv(p, up0_, c.u0_in), Activation::relu);
    return detail::conv(p, out_, c.u0);
  }

  /// Accumulates parameter gradients. Input gradients are not propagated: the
  /// network's inputs are treated as constants during training.
  void backward(ParamStore<T>& p, const Tensor<T>& grad_out, const Cache& c) const {
    const std::size_t w = spec_.width;
    auto g = detail::conv_back(p, out_, grad_out, c.u0);
    g = activation_backward(std::move(g), c.u0, Activation::relu);
    auto [g_up_u1, g_h0a] = detail::split2(detail::conv_back(p, up0_, g, c.u0_in), 2 * w);
    auto g_u1 = activation_backward(upsample_nearest2_backward(g_up_u1), c.u1, Activation::relu);
    auto [g_up_b, g_h1a] = detail::split2(detail::conv_back(p, up1_, g_u1, c.u1_in), 2 * w);
    auto g_b = activation_backward(upsample_nearest2_backward(g_up_b), c.b, Activation::relu);
    auto g_bin = detail::conv_back(p, mid_, g_b, c.b_in);
    const auto g_temb = channel_sum(g_bin, {2 * w, 1, 1});
    detail::conv_back(p, time_, g_temb, c.emb, false);
    auto g_h2 = activation_backward(std::move(g_bin), c.h2, Activation::relu);
    auto g_h1 = detail::conv_back(p, down2_, g_h2, c.h1) + g_h1a;
    g_h1 = activation_backward(std::move(g_h1), c.h1, Activation::relu);
    auto g_h0 = detail::conv_back(p, down1_, g_h1, c.h0) + g_h0a;
    g_h0 = activation_backward(std::move(g_h0), c.h0, Activation::relu);
    detail::conv_back(p, in_, g_h0, c.in, false);
  }

  std::pair<std::size_t, std::size_t> head() const { return {out_.weight, out_.bias}; }

 private:
  void build(ParamStore<T>& p) {
    const std::size_t w = spec_.width;
    require(w >= 1, "noise net width must be positive");
    in_ = detail::add_conv(p, "in", kNoiseNetInputChannels, w);
    down1_ = detail::add_conv(p, "down1", w, 2 * w, 3, 2);
    down2_ = detail::add_conv(p, "down2", 2 * w, 2 * w, 3, 2);
    time_ = detail::add_conv(p, "time", embed_dim(), 2 * w, 1);
    mid_ = detail::add_conv(p, "mid", 2 * w, 2 * w);
    up1_ = detail::add_conv(p, "up1", 4 * w, 2 * w);
    up0_ = detail::add_conv(p, "up0", 3 * w, w);
    out_ = detail::add_conv(p, "out", w, kCurveChannels);
  }

  NoiseNetSpec spec_;
  ParamStore<T> proto_;
  detail::ConvLayer in_, down1_, down2_, time_, mid_, up1_, up0_, out_;
};

/// Residual denoiser: head conv, `blocks` x (conv-relu-conv + skip), tail conv
/// added back onto the input image.
template <typename T>
class Denoiser {
 public:
  explicit Denoiser(DenoiserSpec spec = {}) : spec_(spec) {
    build(proto_);
  }

  const DenoiserSpec& spec() const { return spec_; }

  /// Zero-valued parameter store laid out for this network.
  ParamStore<T> make_params() const { return proto_; }

  struct Cache {
    Tensor<T> in;
    std::vector<Tensor<T>> features;  // input of each block, then the tail input
    std::vector<Tensor<T>> hidden;    // relu output inside each block
  };

  Tensor<T> forward(const ParamStore<T>& p, const Tensor<T>& y, Cache* cache = nullptr) const {
    require_image(y, "denoiser input");
    if (cache) {
      cache->in = y;
      cache->features.clear();
      cache->hidden.clear();
    }
    Tensor<T> f = detail::conv(p, head_, y);
    for (const auto& [c1, c2] : blocks_) {
      auto h = activation_forward(detail::conv(p, c1, f), Activation::relu);
      auto r = detail::conv(p, c2, h);
      if (cache) {
        cache->features.push_back(f);
        cache->hidden.push_back(std::move(h));
      }
      f += r;
    }
    auto out = detail::conv(p, tail_, f);
    if (cache) cache->features.push_back(std::move(f));
    out += y;
    return out;
  }

  /// Returns d(loss)/d(y) and accumulates parameter gradients.
  Tensor<T> backward(ParamStore<T>& p, const Tensor<T>& grad_out, const Cache& c) const {
    Tensor<T> gf = detail::conv_back(p, tail_, grad_out, c.features.back());
    for (std::size_t b = blocks_.size(); b-- > 0;) {
      auto gh = detail::conv_back(p, blocks_[b].second, gf, c.hidden[b]);
      gh = activation_backward(std::move(gh), c.hidden[b], Activation::relu);
      gf += detail::conv_back(p, blocks_[b].first, gh, c.features[b]);
    }
    auto gy = detail::conv_back(p, head_, gf, c.in);
    gy += grad_out;
    return gy;
  }

  std::pair<std::size_t, std::size_t> head() const { return {tail_.weight, tail_.bias}; }

 private:
  void build(ParamStore<T>& p) {
    const std::size_t w = spec_.width;
    require(w >= 1, "denoiser width must be positive");
    head_ = detail::add_conv(p, "head", 3, w);
    blocks_.clear();
    for (std::size_t b = 0; b < spec_.blocks; ++b) {
      const auto base = "block" + std::to_string(b + 1);
      auto c1 = detail::add_conv(p, base + ".conv1", w, w);
      auto c2 = detail::add_conv(p, base + ".conv2", w, w);
      blocks_.emplace_back(c1, c2);
    }
    tail_ = detail::add_conv(p, "tail", w, 3);
  }

  DenoiserSpec spec_;
  ParamStore<T> proto_;
  detail::ConvLayer head_, tail_;
  std::vector<std::pair<detail::ConvLayer, detail::ConvLayer>> blocks_;
};

/// Zeroes a network's output layer so it emits zero (curve/noise nets) or
/// becomes the identity (denoiser).
template <typename T>
void zero_head(ParamStore<T>& p, std::pair<std::size_t, std::size_t> head) {
  p.value(head.first).fill(T(0));
  p.value(head.second).fill(T(0));
}

template <typename T>
void scale_weights(ParamStore<T>& p, std::size_t index, T factor) {
  for (auto& v : p.value(index).data()) v *= factor;
}

}  // namespace bdce
