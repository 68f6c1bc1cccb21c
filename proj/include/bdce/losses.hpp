#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "bdce/curve.hpp"
#include "bdce/resample.hpp"
#include "bdce/rng.hpp"

namespace bdce {

/// Mean squared error between true and predicted noise.
template <typename T>
double loss_simple(const Tensor<T>& eps, const Tensor<T>& eps_hat) {
  require_same_shape(eps, eps_hat, "loss_simple");
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = static_cast<double>(eps_hat[i]) - static_cast<double>(eps[i]);
    s += d * d;
  }
  return s / static_cast<double>(eps.size());
}

/// d(loss_simple)/d(eps_hat), scaled by `weight`.
template <typename T>
Tensor<T> loss_simple_grad(const Tensor<T>& eps, const Tensor<T>& eps_hat, double weight = 1.0) {
  require_same_shape(eps, eps_hat, "loss_simple_grad");
  Tensor<T> g(eps.dims());
  const double k = 2.0 * weight / static_cast<double>(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i)
    g[i] = static_cast<T>(k * (static_cast<double>(eps_hat[i]) - static_cast<double>(eps[i])));
  return g;
}

/// L2 distance normalised by element count: sqrt(mean((a - b)^2)).
template <typename T>
double rms_distance(const Tensor<T>& a, const Tensor<T>& b) {
  return std::sqrt(loss_simple(b, a));
}

/// d(rms_distance)/d(a), scaled by `weight`; zero where the distance is zero.
template <typename T>
Tensor<T> rms_distance_grad(const Tensor<T>& a, const Tensor<T>& b, double weight = 1.0) {
  require_same_shape(a, b, "rms_distance_grad");
  Tensor<T> g(a.dims());
  const double r = rms_distance(a, b);
  if (r == 0.0) return g;
  const double k = weight / (static_cast<double>(a.size()) * r);
  for (std::size_t i = 0; i < a.size(); ++i)
    g[i] = static_cast<T>(k * (static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return g;
}

/// Supervised reconstruction loss on the enhanced image.
template <typename T>
double loss_sup(const Tensor<T>& enhanced, const Tensor<T>& target) {
  return rms_distance(enhanced, target);
}

template <typename T>
struct BootstrapResult {
  double loss = 0.0;
  CurveMap<T> grad_x0;  // filled when requested
};

/// Distance between the target and the low-light image adjusted by the
/// upsampled predicted curves (no denoiser).
template <typename T>
BootstrapResult<T> loss_bootstrap(const Tensor<T>& low, const CurveMap<T>& x0_hat, const Tensor<T>& target,
                                  bool with_grad = false, double weight = 1.0) {
  require_image(low, "loss_bootstrap");
  require_same_shape(low, target, "loss_bootstrap");
  const auto curves = upsample_curve(x0_hat, low.height(), low.width());
  CurveChainCache<T> cache;
  const auto chain = le_chain<T>(low, curves, nullptr, nullptr, with_grad ? &cache : nullptr);
  BootstrapResult<T> r;
  r.loss = rms_distance(chain.final, target);
  if (with_grad) {
    const auto g_final = rms_distance_grad(chain.final, target, weight);
    const auto g_curves = le_chain_backward<T>(g_final, {}, curves, cache, nullptr, nullptr);
    r.grad_x0 = upsample_curve_backward(g_curves, x0_hat);
  }
  return r;
}

/// Downsample-consistency term for one image and one method pair.
template <typename T>
double self_consistency(const Tensor<T>& img, ResampleMethod m1, ResampleMethod m2, Tensor<T>* grad = nullptr,
                        double weight = 1.0) {
  require_chw(img, "loss_self");
  if (img.height() % 2 != 0 || img.width() % 2 != 0)
    throw ShapeError("loss_self: intermediate " + shape_str(img.dims()) + " has odd spatial dims");
  const std::size_t h = img.height() / 2, w = img.width() / 2;
  const auto d1 = resize(img, m1, h, w);
  const auto d2 = resize(img, m2, h, w);
  const double r = rms_distance(d1, d2);
  if (grad) {
    const auto g = rms_distance_grad(d1, d2, weight);
    *grad = resize_backward(g, img, m1) - resize_backward(g, img, m2);
  }
  return r;
}

/// Two distinct downsampling methods drawn uniformly.
inline std::pair<ResampleMethod, ResampleMethod> draw_method_pair(Rng& rng) {
  const auto n = static_cast<std::int64_t>(kAllResampleMethods.size());
  const auto a = rng.uniform_int(0, n - 1);
  auto b = rng.uniform_int(0, n - 2);
  if (b >= a) ++b;
  return {kAllResampleMethods[static_cast<std::size_t>(a)], kAllResampleMethods[static_cast<std::size_t>(b)]};
}

template <typename T>
struct SelfLossResult {
  double loss = 0.0;
  std::vector<Tensor<T>> grads;  // per intermediate, when requested
};

/// Sum over the intermediates of the RMS distance between two randomly chosen
/// 2x downsamplings of each.
template <typename T>
SelfLossResult<T> loss_self(const std::vector<Tensor<T>>& intermediates, Rng& rng, bool with_grad = false,
                            double weight = 1.0) {
  require(intermediates.size() == kCurveStages,
          "loss_self: expected 8 intermediates, got " + std::to_string(intermediates.size()));
  SelfLossResult<T> r;
  for (const auto& img : intermediates) {
    const auto [m1, m2] = draw_method_pair(rng);
    Tensor<T> g;
    r.loss += self_consistency(img, m1, m2, with_grad ? &g : nullptr, weight);
    if (with_grad) r.grads.push_back(std::move(g));
  }
  return r;
}

}  // namespace bdce
