#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bdce/image.hpp"
#include "bdce/models.hpp"
#include "bdce/rng.hpp"

namespace bdce {

/// Linear beta schedule with cumulative retention products. Timesteps are
/// 1-based; alpha_bar(0) is the noise-free endpoint 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  NoiseSchedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ShapeError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
      throw ShapeError("make_schedule: need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) +
                       ", " + std::to_string(beta_end));
    beta_.resize(static_cast<std::size_t>(steps));
    alpha_.resize(beta_.size());
    alpha_bar_.resize(beta_.size());
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
      const auto i = static_cast<std::size_t>(t - 1);
      beta_[i] = beta_start + (beta_end - beta_start) * frac;
      alpha_[i] = 1.0 - beta_[i];
      prod *= alpha_[i];
      alpha_bar_[i] = prod;
    }
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > steps())
      throw ShapeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_, alpha_, alpha_bar_;
};

inline NoiseSchedule make_schedule(int steps, double beta_start = 1e-4, double beta_end = 2e-2) {
  return NoiseSchedule(steps, beta_start, beta_end);
}

struct SamplerConfig {
  int num_steps = 20;
  double eta = 0.0;
  std::vector<int> timesteps;  // strictly increasing subsequence of [1, T]
};

/// Uniformly spaced sampling subsequence ending at T.
inline SamplerConfig make_sampler(int total_steps, int num_steps, double eta = 0.0) {
  if (num_steps < 1 || num_steps > total_steps)
    throw ShapeError("sampler: steps must lie in [1, T], got " + std::to_string(num_steps));
  if (!(eta >= 0.0 && eta <= 1.0)) throw ShapeError("sampler: eta must lie in [0, 1]");
  SamplerConfig cfg;
  cfg.num_steps = num_steps;
  cfg.eta = eta;
  for (int i = 1; i <= num_steps; ++i)
    cfg.timesteps.push_back(static_cast<int>((static_cast<long long>(i) * total_steps) / num_steps));
  return cfg;
}

inline void require_timestep(int t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps())
    throw ShapeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(sched.steps()) + "]");
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <typename T>
Tensor<T> forward_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_sample");
  require_timestep(t, sched);
  const double ab = sched.alpha_bar(t);
  const T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
  Tensor<T> out(x0.dims());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

/// Algebraic inversion of forward_sample without the curve-domain clamp.
template <typename T>
Tensor<T> predict_x0_unclamped(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& sched) {
  require_same_shape(x_t, eps_hat, "predict_x0");
  require_timestep(t, sched);
  const double ab = sched.alpha_bar(t);
  if (!(ab > 0.0)) throw NumericError("predict_x0: alpha_bar is zero at t=" + std::to_string(t));
  const T inv = static_cast<T>(1.0 / std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
  Tensor<T> out(x_t.dims());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) * inv;
  return out;
}

/// Predicted clean curve parameters, clamped to [-1,1].
template <typename T>
Tensor<T> predict_x0(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& sched) {
  return clamp(predict_x0_unclamped(x_t, eps_hat, t, sched), T(-1), T(1));
}

/// sigma for a DDIM step t -> t_prev.
inline double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

/// DDIM update from t to t_prev (t_prev = 0 is the clean endpoint).
template <typename T>
Tensor<T> reverse_step(const Tensor<T>& x_t, const Tensor<T>& x0_hat, int t, int t_prev, const SamplerConfig& cfg,
                       const Tensor<T>& noise, const NoiseSchedule& sched) {
  require_same_shape(x_t, x0_hat, "reverse_step");
  require_same_shape(x_t, noise, "reverse_step noise");
  if (t_prev >= t || t_prev < 0)
    throw ShapeError("reverse_step: need 0 <= t_prev < t, got t=" + std::to_string(t) + " t_prev=" +
                     std::to_string(t_prev));
  const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
  const double sigma = ddim_sigma(t, t_prev, cfg.eta, sched);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab), sa_prev = std::sqrt(ab_prev);
  Tensor<T> out(x_t.dims());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double eps = (static_cast<double>(x_t[i]) - sa * static_cast<double>(x0_hat[i])) / sb;
    double v = sa_prev * static_cast<double>(x0_hat[i]) + dir * eps;
    if (sigma > 0.0) v += sigma * static_cast<double>(noise[i]);
    out[i] = static_cast<T>(v);
  }
  return out;
}

/// Conditional reverse diffusion over curve parameters, starting from
/// Gaussian noise drawn from `seed`.
template <typename T>
CurveMap<T> sample_curves(const Tensor<T>& cond_image, const CurveMap<T>& cond_curves, const NoiseNet<T>& net,
                          const ParamStore<T>& params, const SamplerConfig& cfg, const NoiseSchedule& sched,
                          std::uint64_t seed) {
  require_image(cond_image, "sample_curves");
  require_curves(cond_curves, "sample_curves");
  require(cond_image.height() == cond_curves.height() && cond_image.width() == cond_curves.width(),
          "sample_curves: image and curve conditions disagree in size");
  require(!cfg.timesteps.empty(), "sample_curves: empty timestep schedule");
  Rng rng(seed);
  auto x = rng.normal_tensor<T>(cond_curves.dims());
  Tensor<T> x0_hat;
  for (std::size_t k = cfg.timesteps.size(); k-- > 0;) {
    const int t = cfg.timesteps[k];
    const int t_prev = k == 0 ? 0 : cfg.timesteps[k - 1];
    const auto eps_hat = net.forward(params, x, cond_image, cond_curves, t, sched.steps());
    x0_hat = predict_x0(x, eps_hat, t, sched);
    const auto noise = cfg.eta > 0.0 ? rng.normal_tensor<T>(x.dims()) : Tensor<T>(x.dims());
    x = reverse_step(x, x0_hat, t, t_prev, cfg, noise, sched);
  }
  return clamp(std::move(x), T(-1), T(1));
}

}  // namespace bdce
