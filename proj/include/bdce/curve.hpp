#pragma once

#include <vector>

#include "bdce/image.hpp"
#include "bdce/models.hpp"
#include "bdce/resample.hpp"

namespace bdce {

/// One light-enhancement iteration, y + c * y * (1 - y), elementwise.
/// Maps [0,1] into itself whenever c lies in [-1,1].
template <typename T>
Tensor<T> le_step(const Tensor<T>& y, const Tensor<T>& c) {
  require_same_shape(y, c, "le_step");
  Tensor<T> out(y.dims());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + c[i] * y[i] * (T(1) - y[i]);
  return out;
}

/// Curve stage `stage` (0-based) of a 24-plane curve map.
template <typename T>
Tensor<T> curve_stage(const CurveMap<T>& curves, std::size_t stage) {
  require(stage < kCurveStages, "curve_stage: stage out of range");
  return slice_channels(curves, 3 * stage, 3);
}

template <typename T>
struct CurveChain {
  Tensor<T> final;
  std::vector<Tensor<T>> intermediates;  // one per stage; the last equals `final`
};

template <typename T>
struct CurveChainCache {
  std::vector<Tensor<T>> stage_in;       // image entering each stage
  std::vector<Tensor<T>> stage_out;      // le_step output of each stage
  std::vector<Tensor<T>> refined;        // denoiser output before clamping
  std::vector<typename Denoiser<T>::Cache> denoise;
  bool denoised = false;
};

/// Shared implementation of le_apply and le_apply_denoised. With a denoiser,
/// every stage output is refined by it and clamped to [0,1].
template <typename T>
CurveChain<T> le_chain(const Tensor<T>& image, const CurveMap<T>& curves, const Denoiser<T>* denoiser,
                       const ParamStore<T>* denoiser_params, CurveChainCache<T>* cache = nullptr) {
  require_image(image, "le_apply");
  require_curves(curves, "le_apply");
  require(image.height() == curves.height() && image.width() == curves.width(),
          "le_apply: curve map " + shape_str(curves.dims()) + " does not match image " + shape_str(image.dims()));
  require((denoiser == nullptr) == (denoiser_params == nullptr), "le_apply: denoiser and its parameters go together");
  if (cache) {
    *cache = {};
    cache->denoised = denoiser != nullptr;
  }
  CurveChain<T> res;
  Tensor<T> y = image;
  for (std::size_t s = 0; s < kCurveStages; ++s) {
    auto next = le_step(y, curve_stage(curves, s));
    if (cache) {
      cache->stage_in.push_back(y);
      cache->stage_out.push_back(next);
    }
    if (denoiser) {
      typename Denoiser<T>::Cache dc;
      auto refined = denoiser->forward(*denoiser_params, next, cache ? &dc : nullptr);
      next = clamp(refined, T(0), T(1));
      if (cache) {
        cache->refined.push_back(std::move(refined));
        cache->denoise.push_back(std::move(dc));
      }
    }
    res.intermediates.push_back(next);
    y = std::move(next);
  }
  res.final = std::move(y);
  return res;
}

/// Sequential composition of the eight curve stages.
template <typename T>
Tensor<T> le_apply(const Tensor<T>& image, const CurveMap<T>& curves) {
  return le_chain<T>(image, curves, nullptr, nullptr).final;
}

/// Curve stages interleaved with the denoiser; returns the final image and the
/// eight refined intermediates.
template <typename T>
CurveChain<T> le_apply_denoised(const Tensor<T>& image, const CurveMap<T>& curves, const Denoiser<T>& denoiser,
                                const ParamStore<T>& params) {
  return le_chain<T>(image, curves, &denoiser, &params);
}

/// Backpropagates through a cached curve chain. `grad_intermediates` may be
/// empty or hold one (possibly empty) gradient per stage; `grad_final` is added
/// to the last stage. Returns d(loss)/d(curves); denoiser gradients accumulate
/// into `denoiser_params`.
template <typename T>
CurveMap<T> le_chain_backward(const Tensor<T>& grad_final, const std::vector<Tensor<T>>& grad_intermediates,
                              const CurveMap<T>& curves, const CurveChainCache<T>& cache, const Denoiser<T>* denoiser,
                              ParamStore<T>* denoiser_params) {
  require(cache.stage_in.size() == kCurveStages, "le_chain_backward: cache is empty");
  require(!cache.denoised || (denoiser && denoiser_params), "le_chain_backward: denoiser required");
  CurveMap<T> g_curves(curves.dims());
  Tensor<T> g = grad_final.empty() ? Tensor<T>(cache.stage_in[0].dims()) : grad_final;
  const std::size_t plane = cache.stage_in[0].size();
  for (std::size_t s = kCurveStages; s-- > 0;) {
    if (s < grad_intermediates.size() && !grad_intermediates[s].empty()) g += grad_intermediates[s];
    if (cache.denoised) {
      const auto& pre = cache.refined[s];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (pre[i] < T(0) || pre[i] > T(1)) g[i] = T(0);
      g = denoiser->backward(*denoiser_params, g, cache.denoise[s]);
    }
    const auto& y = cache.stage_in[s];
    T* gc = g_curves.ptr() + s * plane;
    const T* c = curves.ptr() + s * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      gc[i] = g[i] * y[i] * (T(1) - y[i]);
      g[i] *= T(1) + c[i] * (T(1) - T(2) * y[i]);
    }
  }
  return g_curves;
}

/// Bilinear upsampling of a low-resolution curve map, clamped to [-1,1].
template <typename T>
CurveMap<T> upsample_curve(const CurveMap<T>& low, std::size_t height, std::size_t width) {
  require_curves(low, "upsample_curve");
  require(height >= low.height() && width >= low.width(),
          "upsample_curve: target " + std::to_string(height) + "x" + std::to_string(width) +
              " is smaller than the curve map");
  return clamp(resize(low, ResampleMethod::bilinear, height, width), T(-1), T(1));
}

template <typename T>
CurveMap<T> upsample_curve_backward(const CurveMap<T>& grad_out, const CurveMap<T>& low) {
  return resize_backward(grad_out, low, ResampleMethod::bilinear);
}

}  // namespace bdce
