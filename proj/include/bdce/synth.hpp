#pragma once

#include <algorithm>
#include <cmath>

#include "bdce/image.hpp"
#include "bdce/rng.hpp"

namespace bdce {

struct PairedSample {
  Image low;     // degraded input
  Image normal;  // reference
};

/// Darkens a clean image: clamp(clean^gamma * exposure + N(0, sigma^2)).
inline PairedSample synth_pair_with_exposure(const Image& clean, double gamma, double exposure, double noise_sigma,
                                             Rng& rng) {
  require_image(clean, "synth_pair");
  require(gamma >= 1.0, "synth_pair: gamma must be >= 1");
  require(noise_sigma >= 0.0, "synth_pair: noise sigma must be >= 0");
  PairedSample s{Image(clean.dims()), clean};
  for (std::size_t i = 0; i < clean.size(); ++i) {
    double v = std::pow(static_cast<double>(clean[i]), gamma) * exposure;
    if (noise_sigma > 0.0) v += noise_sigma * rng.normal();
    s.low[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return s;
}

/// As above with the exposure scale drawn uniformly from [0.1, 0.5].
inline PairedSample synth_pair(const Image& clean, double gamma, double noise_sigma, Rng& rng) {
  const double exposure = rng.uniform(0.1, 0.5);
  return synth_pair_with_exposure(clean, gamma, exposure, noise_sigma, rng);
}

/// Procedural clean scene: a smooth colour gradient with a few flat shapes
/// and a low-frequency texture, values kept inside [0.05, 0.95].
inline Image make_synthetic_clean(std::size_t height, std::size_t width, Rng& rng) {
  Image img = Image::chw(3, height, width);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.15, 0.9);
    c1[c] = rng.uniform(0.15, 0.9);
  }
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double fx = rng.uniform(0.5, 3.0), fy = rng.uniform(0.5, 3.0), amp = rng.uniform(0.0, 0.08);
  const double inv_w = 1.0 / static_cast<double>(width), inv_h = 1.0 / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) * inv_w, v = (static_cast<double>(y) + 0.5) * inv_h;
      const double s = std::clamp(0.5 + (u - 0.5) * dx + (v - 0.5) * dy, 0.0, 1.0);
      const double tex = amp * std::sin(6.283185307179586 * (fx * u + fy * v));
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * s + tex);
    }

  const int shapes = static_cast<int>(rng.uniform_int(2, 5));
  for (int k = 0; k < shapes; ++k) {
    double col[3];
    for (auto& c : col) c = rng.uniform(0.05, 0.95);
    const bool disk = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, 1.0), cy = rng.uniform(0.0, 1.0);
    const double rx = rng.uniform(0.08, 0.3), ry = rng.uniform(0.08, 0.3);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double u = (static_cast<double>(x) + 0.5) * inv_w, v = (static_cast<double>(y) + 0.5) * inv_h;
        const double nx = (u - cx) / rx, ny = (v - cy) / ry;
        const bool inside = disk ? nx * nx + ny * ny <= 1.0 : std::abs(nx) <= 1.0 && std::abs(ny) <= 1.0;
        if (inside)
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(col[c]);
      }
  }
  for (auto& v : img.data()) v = std::clamp(v, 0.05f, 0.95f);
  return img;
}

}  // namespace bdce
