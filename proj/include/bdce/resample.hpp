#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bdce/layers.hpp"
#include "bdce/tensor.hpp"

namespace bdce {

enum class ResampleMethod { nearest, bilinear, bicubic, lanczos3, maxpool2, avgpool2 };

inline constexpr std::array<ResampleMethod, 6> kAllResampleMethods{
    ResampleMethod::nearest,  ResampleMethod::bilinear, ResampleMethod::bicubic,
    ResampleMethod::lanczos3, ResampleMethod::maxpool2, ResampleMethod::avgpool2};

inline std::string_view method_name(ResampleMethod m) {
  switch (m) {
    case ResampleMethod::nearest: return "nearest";
    case ResampleMethod::bilinear: return "bilinear";
    case ResampleMethod::bicubic: return "bicubic";
    case ResampleMethod::lanczos3: return "lanczos3";
    case ResampleMethod::maxpool2: return "maxpool2";
    case ResampleMethod::avgpool2: return "avgpool2";
  }
  return "?";
}

inline std::optional<ResampleMethod> parse_method(std::string_view s) {
  for (auto m : kAllResampleMethods)
    if (method_name(m) == s) return m;
  return std::nullopt;
}

inline bool is_pooling(ResampleMethod m) { return m == ResampleMethod::maxpool2 || m == ResampleMethod::avgpool2; }

namespace detail {

/// Interpolation weights of one output sample along one axis. The output is
/// evaluated as x[ref] + sum_i w_i (x[i] - x[ref]) over the non-reference taps,
/// so constant signals are reproduced exactly.
struct AxisSample {
  std::size_t ref = 0;
  std::vector<std::pair<std::size_t, double>> others;
  double ref_weight = 1.0;  // 1 - sum of other weights; used by the adjoint
};

inline double cubic_weight(double d) {
  constexpr double a = -0.5;
  d = std::abs(d);
  if (d <= 1.0) return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0;
  if (d < 2.0) return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a;
  return 0.0;
}

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

inline double lanczos3_weight(double d) { return std::abs(d) < 3.0 ? sinc(d) * sinc(d / 3.0) : 0.0; }

inline std::vector<AxisSample> axis_plan(std::size_t in, std::size_t out, ResampleMethod m) {
  std::vector<AxisSample> plan(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const auto clampi = [in](std::ptrdiff_t i) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(in) - 1));
  };
  for (std::size_t j = 0; j < out; ++j) {
    std::vector<std::pair<std::size_t, double>> taps;
    const double center = (static_cast<double>(j) + 0.5) * scale - 0.5;
    if (m == ResampleMethod::nearest) {
      const auto idx = static_cast<std::ptrdiff_t>(std::floor((static_cast<double>(j) + 0.5) * scale));
      taps.emplace_back(clampi(idx), 1.0);
    } else {
      const auto base = static_cast<std::ptrdiff_t>(std::floor(center));
      const double frac = center - static_cast<double>(base);
      std::ptrdiff_t lo = 0, hi = 1;
      if (m == ResampleMethod::bicubic) lo = -1, hi = 2;
      if (m == ResampleMethod::lanczos3) lo = -2, hi = 3;
      double total = 0.0;
      for (std::ptrdiff_t k = lo; k <= hi; ++k) {
        const double d = static_cast<double>(k) - frac;
        const double w = m == ResampleMethod::bilinear ? std::max(0.0, 1.0 - std::abs(d))
                         : m == ResampleMethod::bicubic ? cubic_weight(d)
                                                        : lanczos3_weight(d);
        taps.emplace_back(clampi(base + k), w);
        total += w;
      }
      for (auto& t : taps) t.second /= total;
    }
    // Merge taps that clamp onto the same source index.
    std::sort(taps.begin(), taps.end());
    std::vector<std::pair<std::size_t, double>> merged;
    for (const auto& t : taps) {
      if (!merged.empty() && merged.back().first == t.first)
        merged.back().second += t.second;
      else
        merged.push_back(t);
    }
    auto& s = plan[j];
    const auto best = std::max_element(merged.begin(), merged.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    s.ref = best->first;
    double others = 0.0;
    for (const auto& t : merged)
      if (t.first != s.ref && t.second != 0.0) {
        s.others.push_back(t);
        others += t.second;
      }
    s.ref_weight = 1.0 - others;
  }
  return plan;
}

template <typename T>
Tensor<T> resize_axis(const Tensor<T>& x, const std::vector<AxisSample>& plan, bool along_width) {
  const std::size_t c = x.channels(), h = x.height(), w = x.width();
  const std::size_t oh = along_width ? h : plan.size(), ow = along_width ? plan.size() : w;
  Tensor<T> out = Tensor<T>::chw(c, oh, ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const auto& s = plan[along_width ? xo : y];
        const auto src = [&](std::size_t i) { return along_width ? x.at(ch, y, i) : x.at(ch, i, xo); };
        const T ref = src(s.ref);
        T acc = T(0);
        for (const auto& [i, wt] : s.others) acc += static_cast<T>(wt) * (src(i) - ref);
        out.at(ch, y, xo) = ref + acc;
      }
  return out;
}

template <typename T>
Tensor<T> resize_axis_adjoint(const Tensor<T>& g, const std::vector<AxisSample>& plan, std::size_t in_size,
                              bool along_width) {
  const std::size_t c = g.channels();
  const std::size_t ih = along_width ? g.height() : in_size, iw = along_width ? in_size : g.width();
  Tensor<T> out = Tensor<T>::chw(c, ih, iw);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < g.height(); ++y)
      for (std::size_t xo = 0; xo < g.width(); ++xo) {
        const auto& s = plan[along_width ? xo : y];
        const T go = g.at(ch, y, xo);
        auto dst = [&](std::size_t i) -> T& { return along_width ? out.at(ch, y, i) : out.at(ch, i, xo); };
        dst(s.ref) += static_cast<T>(s.ref_weight) * go;
        for (const auto& [i, wt] : s.others) dst(i) += static_cast<T>(wt) * go;
      }
  return out;
}

inline std::size_t pool_factor(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  const bool ok = in_h % out_h == 0 && in_w % out_w == 0 && in_h / out_h == in_w / out_w;
  if (!ok)
    throw ShapeError("resize: pooling needs one integer factor for both axes, got " + std::to_string(in_h) + "x" +
                     std::to_string(in_w) + " -> " + std::to_string(out_h) + "x" + std::to_string(out_w));
  return in_h / out_h;
}

inline bool clamps_output(ResampleMethod m) { return m == ResampleMethod::bicubic || m == ResampleMethod::lanczos3; }

template <typename T>
Tensor<T> resize_unclamped(const Tensor<T>& x, ResampleMethod m, std::size_t out_h, std::size_t out_w) {
  if (is_pooling(m)) {
    const auto k = pool_factor(x.height(), x.width(), out_h, out_w);
    return pool_forward(x, k, m == ResampleMethod::maxpool2 ? PoolKind::max : PoolKind::average);
  }
  const auto horizontal = resize_axis(x, axis_plan(x.width(), out_w, m), true);
  return resize_axis(horizontal, axis_plan(x.height(), out_h, m), false);
}

}  // namespace detail

/// Per-channel resampling with half-pixel centers and edge clamping.
/// Bicubic (Catmull-Rom, a = -0.5) and Lanczos-3 results are clamped to [0,1].
template <typename T>
Tensor<T> resize(const Tensor<T>& x, ResampleMethod m, std::size_t out_h, std::size_t out_w) {
  require_chw(x, "resize");
  require(out_h >= 1 && out_w >= 1, "resize: output size must be positive");
  auto out = detail::resize_unclamped(x, m, out_h, out_w);
  if (detail::clamps_output(m)) out = clamp(std::move(out), T(0), T(1));
  return out;
}

/// Gradient of resize() with respect to its input.
template <typename T>
Tensor<T> resize_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input, ResampleMethod m) {
  require_chw(saved_input, "resize_backward");
  require_chw(grad_out, "resize_backward");
  const std::size_t out_h = grad_out.height(), out_w = grad_out.width();
  if (is_pooling(m)) {
    const auto k = detail::pool_factor(saved_input.height(), saved_input.width(), out_h, out_w);
    return pool_backward(grad_out, saved_input, k, m == ResampleMethod::maxpool2 ? PoolKind::max : PoolKind::average);
  }
  Tensor<T> g = grad_out;
  if (detail::clamps_output(m)) {
    const auto pre = detail::resize_unclamped(saved_input, m, out_h, out_w);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (pre[i] < T(0) || pre[i] > T(1)) g[i] = T(0);
  }
  const auto gv = detail::resize_axis_adjoint(g, detail::axis_plan(saved_input.height(), out_h, m),
                                              saved_input.height(), false);
  return detail::resize_axis_adjoint(gv, detail::axis_plan(saved_input.width(), out_w, m), saved_input.width(), true);
}

}  // namespace bdce
