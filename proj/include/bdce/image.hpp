#pragma once

#include <string>

#include "bdce/tensor.hpp"

namespace bdce {

/// Planar RGB image, 3 x H x W with values in [0,1].
using Image = Tensor<float>;

/// 24 x H x W curve parameters in [-1,1]: stage i occupies channels [3i, 3i+3).
template <typename T>
using CurveMap = Tensor<T>;

inline constexpr std::size_t kCurveStages = 8;
inline constexpr std::size_t kCurveChannels = 3 * kCurveStages;

template <typename T>
void require_image(const Tensor<T>& img, const char* what) {
  require(img.rank() == 3 && img.channels() == 3,
          std::string(what) + ": expected a 3 x H x W image, got " + shape_str(img.dims()));
}

template <typename T>
void require_curves(const Tensor<T>& c, const char* what) {
  require(c.rank() == 3 && c.channels() == kCurveChannels,
          std::string(what) + ": expected a 24 x H x W curve map, got " + shape_str(c.dims()));
}

}  // namespace bdce
