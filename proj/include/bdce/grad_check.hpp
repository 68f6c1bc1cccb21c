#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bdce/params.hpp"

namespace bdce {

/// Loss evaluated at the current parameter values. When `with_grad` is set the
/// callee must also leave d(loss)/d(param) in the store's gradient buffers.
using LossFn = std::function<double(ParamStore<double>&, bool with_grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t refined = 0;  // coordinates that needed a smaller step
  std::size_t skipped = 0;  // coordinates with no kink-free step

};

struct GradCheckOptions {
  double step = 1e-4;
  std::size_t min_samples = 200;
  std::uint64_t seed = 0;
  int max_refinements = 4;  // step shrinks 10x per refinement
  double tolerance = 1e-5;  // only sets the denominator floor below
};

namespace detail {

struct TracedValue {
  double value;
  std::uint64_t branches;
};

inline TracedValue traced_loss(const LossFn& loss, ParamStore<double>& params, bool with_grad) {
  auto& t = branch_trace();
  t = BranchTrace{};
  t.active = true;
  const double v = loss(params, with_grad);
  const auto h = t.hash;
  t = BranchTrace{};
  return {v, h};
}

}  // namespace detail

/// Compares analytic gradients against central differences on a random
/// subset of scalar parameters (every scalar when the store is small).
/// A difference whose +/- evaluations take a different branch at some relu,
/// clamp or max than the base point is redone with a smaller step.
inline GradCheckResult grad_check(ParamStore<double>& params, const LossFn& loss,
                                  GradCheckOptions opt = {}) {
  params.zero_grad();
  const auto base = detail::traced_loss(loss, params, true);
  if (!std::isfinite(base.value)) throw NumericError("grad_check: loss is not finite");

  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].value.size(); ++j) all.emplace_back(i, j);

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  if (all.size() <= opt.min_samples) {
    picks = all;
  } else {
    // Every entry contributes at least one coordinate; the rest are uniform.
    Rng rng(opt.seed);
    for (std::size_t i = 0; i < params.size(); ++i)
      picks.emplace_back(i, static_cast<std::size_t>(
                                rng.uniform_int(0, static_cast<std::int64_t>(params[i].value.size()) - 1)));
    while (picks.size() < opt.min_samples)
      picks.push_back(all[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(all.size()) - 1))]);
  }

  std::vector<double> analytic;
  analytic.reserve(picks.size());
  for (auto [i, j] : picks) analytic.push_back(params[i].grad[j]);

  GradCheckResult res;
  for (std::size_t n = 0; n < picks.size(); ++n) {
    auto [i, j] = picks[n];
    double& w = params[i].value[j];
    const double orig = w;
    double step = opt.step, numeric = 0.0;
    bool smooth = false;
    for (int attempt = 0; attempt <= opt.max_refinements; ++attempt) {
      if (attempt > 0) step *= 0.1;
      w = orig + step;
      const auto up = detail::traced_loss(loss, params, false);
      w = orig - step;
      const auto down = detail::traced_loss(loss, params, false);
      w = orig;
      if (!std::isfinite(up.value) || !std::isfinite(down.value)) throw NumericError("grad_check: loss is not finite");
      smooth = up.branches == base.branches && down.branches == base.branches;
      numeric = (up.value - down.value) / (2.0 * step);
      if (smooth) break;
    }
    if (step < opt.step) ++res.refined;
    if (!smooth) {
      ++res.skipped;
      continue;
    }
    // Gradients below the difference quotient's rounding noise are compared in
    // absolute terms against that noise.
    const double noise = 100.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base.value)) / step;
    const double denom = std::max({std::abs(analytic[n]), std::abs(numeric), 1e-8, noise / opt.tolerance});
    const double rel = std::abs(analytic[n] - numeric) / denom;
    if (rel > res.max_rel_error || res.checked == 0) {
      res.max_rel_error = rel;
      res.worst_param = params[i].name + "[" + std::to_string(j) + "]";
      res.worst_analytic = analytic[n];
      res.worst_numeric = numeric;
    }
    ++res.checked;
  }
  params.zero_grad();
  return res;
}

}  // namespace bdce
