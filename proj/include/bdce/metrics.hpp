#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "bdce/image.hpp"

namespace bdce {

/// Peak signal-to-noise ratio with peak 1.0; +infinity when the images are identical.
inline double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline constexpr std::size_t kSsimWindow = 11;

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over channels.
inline double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  require_chw(a, "ssim");
  require(a.height() >= kSsimWindow && a.width() >= kSsimWindow,
          "ssim: image " + shape_str(a.dims()) + " is smaller than the 11x11 window");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  constexpr int r = kSsimWindow / 2;

  std::array<double, kSsimWindow> g{};
  double gs = 0.0;
  for (int i = -r; i <= r; ++i) gs += g[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
  for (auto& v : g) v /= gs;

  const std::size_t h = a.height(), w = a.width();
  const std::size_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  // Separable filtering of the five moment planes, valid region only.
  const auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(h * ow), out(oh * ow);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < kSsimWindow; ++k) s += g[k] * src[y * w + x + k];
        tmp[y * ow + x] = s;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < kSsimWindow; ++k) s += g[k] * tmp[(y + k) * ow + x];
        out[y * ow + x] = s;
      }
    return out;
  };

  double total = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c) {
    std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
    const auto pa = a.channel(c), pb = b.channel(c);
    for (std::size_t i = 0; i < h * w; ++i) {
      x[i] = pa[i];
      y[i] = pb[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double mu_x = mx[i], mu_y = my[i];
      const double var_x = sxx[i] - mu_x * mu_x, var_y = syy[i] - mu_y * mu_y, cov = sxy[i] - mu_x * mu_y;
      acc += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) /
             ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(a.channels());
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares y = slope * x + intercept with its R^2.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "linear_fit: need at least two paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, "linear_fit: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

}  // namespace bdce
