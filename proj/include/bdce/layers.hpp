#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bdce/tensor.hpp"

namespace bdce {

/// Multiply-accumulate count of every conv2d_forward on this thread.
/// Used to show that network cost does not depend on input resolution.
inline std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

struct ConvGeom {
  std::size_t cin, h, w, cout, k, stride, pad, hout, wout;
  std::size_t taps() const { return cin * k * k; }
};

template <typename T>
ConvGeom conv_geom(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride,
                   std::size_t padding) {
  require_chw(input, "conv2d");
  require(weight.rank() == 4, "conv2d: weight must be Cout x Cin x k x k, got " +
                                  shape_str(weight.dims()));
  require(weight.dim(2) == weight.dim(3) && weight.dim(2) % 2 == 1, "conv2d: kernel must be square and odd");
  require(weight.dim(1) == input.channels(),
          "conv2d: input has " + std::to_string(input.channels()) + " channels, weight expects " +
              std::to_string(weight.dim(1)));
  require(stride >= 1, "conv2d: stride must be >= 1");
  ConvGeom g{input.channels(), input.height(), input.width(), weight.dim(0), weight.dim(2),
             stride, padding, 0, 0};
  require(g.h + 2 * padding >= g.k && g.w + 2 * padding >= g.k, "conv2d: input smaller than kernel");
  g.hout = (g.h + 2 * padding - g.k) / stride + 1;
  g.wout = (g.w + 2 * padding - g.k) / stride + 1;
  return g;
}

// Output rows processed per im2col block; bounds the scratch buffer for large images.
inline std::size_t rows_per_block(const ConvGeom& g) {
  constexpr std::size_t kMaxScratch = std::size_t{1} << 22;
  const std::size_t per_row = std::max<std::size_t>(1, g.taps() * g.wout);
  return std::clamp<std::size_t>(kMaxScratch / per_row, 1, g.hout);
}

// Per-thread scratch reused across calls; only grows.
template <typename T>
T* scratch(std::size_t slot, std::size_t n) {
  thread_local std::vector<T> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Output columns [lo, hi) whose tap kx lands inside the input row.
inline std::pair<std::size_t, std::size_t> valid_cols(const ConvGeom& g, std::size_t kx) {
  const std::size_t lo = kx >= g.pad ? 0 : (g.pad - kx + g.stride - 1) / g.stride;
  const std::size_t lim = g.w + g.pad - kx;  // ox * stride < lim
  const std::size_t hi = std::min(g.wout, (lim + g.stride - 1) / g.stride);
  return {std::min(lo, hi), hi};
}

template <typename T>
void im2col(const T* in, const ConvGeom& g, std::size_t r0, std::size_t r1, T* cols) {
  const std::size_t p = (r1 - r0) * g.wout;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        const auto [lo, hi] = valid_cols(g, kx);
        for (std::size_t oy = r0; oy < r1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + (oy - r0) * g.wout;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wout, T(0));
            continue;
          }
          const T* src = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          std::fill(dst, dst + lo, T(0));
          if (hi > lo) {
            const std::size_t ix0 = lo * g.stride + kx - g.pad;
            if (g.stride == 1) {
              std::copy(src + ix0, src + ix0 + (hi - lo), dst + lo);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ix0 + (ox - lo) * g.stride];
            }
          }
          std::fill(dst + hi, dst + g.wout, T(0));
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, std::size_t r0, std::size_t r1, T* out) {
  const std::size_t p = (r1 - r0) * g.wout;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        const auto [lo, hi] = valid_cols(g, kx);
        for (std::size_t oy = r0; oy < r1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const T* src = row + (oy - r0) * g.wout;
          T* dst = out + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          if (hi <= lo) continue;
          const std::size_t ix0 = lo * g.stride + kx - g.pad;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ix0 + (ox - lo) * g.stride] += src[ox];
        }
      }
}

}  // namespace detail

/// Zero-padded cross-correlation. Output is Cout x H' x W' with
/// H' = (H + 2*padding - k) / stride + 1.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         std::size_t stride = 1, std::size_t padding = 1) {
  const auto g = detail::conv_geom(input, weight, stride, padding);
  require(bias.size() == g.cout, "conv2d: bias length must equal Cout");
  Tensor<T> out = Tensor<T>::chw(g.cout, g.hout, g.wout);
  const std::size_t out_plane = g.hout * g.wout;
  detail::ConstStridedMap<T> wmat(weight.ptr(), g.cout, g.taps(), Eigen::OuterStride<>(g.taps()));

  const std::size_t block = detail::rows_per_block(g);
  T* cols = detail::scratch<T>(0, g.taps() * std::min(block, g.hout) * g.wout);
  for (std::size_t r0 = 0; r0 < g.hout; r0 += block) {
    const std::size_t r1 = std::min(g.hout, r0 + block);
    const std::size_t p = (r1 - r0) * g.wout;
    detail::im2col(input.ptr(), g, r0, r1, cols);
    detail::ConstStridedMap<T> cmat(cols, g.taps(), p, Eigen::OuterStride<>(p));
    detail::StridedMap<T> omat(out.ptr() + r0 * g.wout, g.cout, p, Eigen::OuterStride<>(out_plane));
    omat.noalias() = wmat * cmat;
    for (std::size_t co = 0; co < g.cout; ++co) omat.row(co).array() += bias[co];
  }
  mac_counter() += static_cast<std::uint64_t>(g.cout) * g.taps() * out_plane;
  return out;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> grad_input;  // empty when not requested
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;
};

/// Exact gradients of conv2d_forward with respect to input, weight, and bias.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                               const Tensor<T>& weight, std::size_t stride = 1,
                               std::size_t padding = 1, bool need_input_grad = true) {
  const auto g = detail::conv_geom(saved_input, weight, stride, padding);
  require(grad_out.dims() == Shape({g.cout, g.hout, g.wout}),
          "conv2d_backward: grad_out dims " + shape_str(grad_out.dims()) + " do not match forward output");
  Conv2dGrads<T> res;
  res.grad_weight = Tensor<T>(weight.dims());
  res.grad_bias = Tensor<T>({g.cout});
  if (need_input_grad) res.grad_input = Tensor<T>(saved_input.dims());

  const std::size_t out_plane = g.hout * g.wout;
  detail::ConstStridedMap<T> wmat(weight.ptr(), g.cout, g.taps(), Eigen::OuterStride<>(g.taps()));
  detail::StridedMap<T> gw(res.grad_weight.ptr(), g.cout, g.taps(), Eigen::OuterStride<>(g.taps()));

  const std::size_t block = detail::rows_per_block(g);
  const std::size_t max_cols = g.taps() * std::min(block, g.hout) * g.wout;
  T* cols = detail::scratch<T>(0, max_cols);
  T* gcols = need_input_grad ? detail::scratch<T>(1, max_cols) : nullptr;
  for (std::size_t r0 = 0; r0 < g.hout; r0 += block) {
    const std::size_t r1 = std::min(g.hout, r0 + block);
    const std::size_t p = (r1 - r0) * g.wout;
    detail::im2col(saved_input.ptr(), g, r0, r1, cols);
    detail::ConstStridedMap<T> cmat(cols, g.taps(), p, Eigen::OuterStride<>(p));
    detail::ConstStridedMap<T> go(grad_out.ptr() + r0 * g.wout, g.cout, p, Eigen::OuterStride<>(out_plane));
    gw.noalias() += go * cmat.transpose();
    // plain loop: Eigen's vectorised sum order depends on pointer alignment
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* row = grad_out.ptr() + co * out_plane + r0 * g.wout;
      T acc = T(0);
      for (std::size_t i = 0; i < p; ++i) acc += row[i];
      res.grad_bias[co] += acc;
    }
    if (need_input_grad) {
      detail::StridedMap<T> gc(gcols, g.taps(), p, Eigen::OuterStride<>(p));
      gc.noalias() = wmat.transpose() * go;
      detail::col2im_add(gcols, g, r0, r1, res.grad_input.ptr());
    }
  }
  return res;
}

enum class Activation { relu, tanh };

inline const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

template <typename T>
Tensor<T> activation_forward(Tensor<T> x, Activation kind) {
  if (kind == Activation::relu) {
    const bool trace = detail::branch_trace().active;
    for (auto& v : x.data()) {
      if (trace) detail::note_branch(v > T(0));
      v = v > T(0) ? v : T(0);
    }
  } else {
    for (auto& v : x.data()) v = std::tanh(v);
  }
  return x;
}

/// Gradient through an activation, expressed in terms of its forward output.
template <typename T>
Tensor<T> activation_backward(Tensor<T> grad, const Tensor<T>& output, Activation kind) {
  require_same_shape(grad, output, "activation_backward");
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (!(output[i] > T(0))) grad[i] = T(0);
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) {
#ifdef BDCE_MUTATE_TANH_BACKWARD
      grad[i] *= output[i] * output[i] - T(1);
#else
      grad[i] *= T(1) - output[i] * output[i];
#endif
    }
  }
  return grad;
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample_nearest2_forward(const Tensor<T>& x) {
  require_chw(x, "upsample_nearest2");
  Tensor<T> out = Tensor<T>::chw(x.channels(), 2 * x.height(), 2 * x.width());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t xx = 0; xx < out.width(); ++xx) out.at(c, y, xx) = x.at(c, y / 2, xx / 2);
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2_backward(const Tensor<T>& grad_out) {
  require_chw(grad_out, "upsample_nearest2_backward");
  require(grad_out.height() % 2 == 0 && grad_out.width() % 2 == 0, "upsample_nearest2_backward: odd dims");
  Tensor<T> g = Tensor<T>::chw(grad_out.channels(), grad_out.height() / 2, grad_out.width() / 2);
  for (std::size_t c = 0; c < grad_out.channels(); ++c)
    for (std::size_t y = 0; y < grad_out.height(); ++y)
      for (std::size_t x = 0; x < grad_out.width(); ++x) g.at(c, y / 2, x / 2) += grad_out.at(c, y, x);
  return g;
}

enum class PoolKind { average, max };

/// Non-overlapping k x k pooling; input dims must be multiples of k.
template <typename T>
Tensor<T> pool_forward(const Tensor<T>& x, std::size_t k, PoolKind kind) {
  require_chw(x, "pool");
  require(k >= 1 && x.height() % k == 0 && x.width() % k == 0,
          "pool: input " + shape_str(x.dims()) + " is not divisible by factor " + std::to_string(k));
  Tensor<T> out = Tensor<T>::chw(x.channels(), x.height() / k, x.width() / k);
  const T inv = T(1) / static_cast<T>(k * k);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t xx = 0; xx < out.width(); ++xx) {
        T acc = kind == PoolKind::max ? x.at(c, y * k, xx * k) : T(0);
        std::size_t arg = 0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const T v = x.at(c, y * k + dy, xx * k + dx);
            if (kind == PoolKind::average) {
              acc += v;
            } else if (v > acc) {
              acc = v;
              arg = dy * k + dx;
            }
          }
        if (kind == PoolKind::max && detail::branch_trace().active) detail::note_branch(arg);
        out.at(c, y, xx) = kind == PoolKind::max ? acc : acc * inv;
      }
  return out;
}

/// Max pooling routes the gradient to the first maximal tap of each window.
template <typename T>
Tensor<T> pool_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input, std::size_t k,
                        PoolKind kind) {
  require_chw(saved_input, "pool_backward");
  require(grad_out.dims() == Shape({saved_input.channels(), saved_input.height() / k, saved_input.width() / k}),
          "pool_backward: grad_out dims mismatch");
  Tensor<T> g(saved_input.dims());
  const T inv = T(1) / static_cast<T>(k * k);
  for (std::size_t c = 0; c < saved_input.channels(); ++c)
    for (std::size_t y = 0; y < grad_out.height(); ++y)
      for (std::size_t x = 0; x < grad_out.width(); ++x) {
        const T go = grad_out.at(c, y, x);
        if (kind == PoolKind::average) {
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) g.at(c, y * k + dy, x * k + dx) += go * inv;
        } else {
          std::size_t by = y * k, bx = x * k;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx)
              if (saved_input.at(c, y * k + dy, x * k + dx) > saved_input.at(c, by, bx)) {
                by = y * k + dy;
                bx = x * k + dx;
              }
          g.at(c, by, bx) += go;
        }
      }
  return g;
}

/// Sinusoidal timestep embedding: dim/2 (sin, cos) pairs with frequencies
/// spaced geometrically from 1 down to 1/T.
template <typename T>
Tensor<T> time_embedding(int t, std::size_t dim, int total_steps) {
  require(dim >= 2 && dim % 2 == 0, "time_embedding: dim must be even and >= 2, got " + std::to_string(dim));
  require(total_steps >= 1 && t >= 0 && t <= total_steps,
          "time_embedding: t=" + std::to_string(t) + " outside [0, " + std::to_string(total_steps) + "]");
  const std::size_t half = dim / 2;
  Tensor<T> e({dim, 1, 1});
  for (std::size_t k = 0; k < half; ++k) {
    const double expo = half == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(half - 1);
    const double omega = std::pow(static_cast<double>(std::max(total_steps, 2)), -expo);
    e[2 * k] = static_cast<T>(std::sin(t * omega));
    e[2 * k + 1] = static_cast<T>(std::cos(t * omega));
  }
  return e;
}

/// x[c, :, :] += v[c] for a per-channel vector v (any shape with C elements).
template <typename T>
void add_channel_broadcast(Tensor<T>& x, const Tensor<T>& v) {
  require_chw(x, "add_channel_broadcast");
  require(v.size() == x.channels(), "add_channel_broadcast: vector length must equal channel count");
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (auto& e : x.channel(c)) e += v[c];
}

/// Gradient of add_channel_broadcast with respect to the broadcast vector.
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& grad, const Shape& vec_dims) {
  require_chw(grad, "channel_sum");
  Tensor<T> g(vec_dims);
  require(g.size() == grad.channels(), "channel_sum: vector length must equal channel count");
  for (std::size_t c = 0; c < grad.channels(); ++c) {
    T s = T(0);
    for (auto e : grad.channel(c)) s += e;
    g[c] = s;
  }
  return g;
}

}  // namespace bdce
