#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bdce/curve.hpp"
#include "bdce/diffusion.hpp"
#include "bdce/grad_check.hpp"
#include "bdce/layers.hpp"
#include "bdce/losses.hpp"
#include "bdce/models.hpp"
#include "bdce/resample.hpp"

namespace bdce {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline constexpr double kGradTolerance = 1e-5;

namespace detail {

inline Tensor<double> random_tensor(const Shape& dims, Rng& rng, double lo, double hi) {
  Tensor<double> t(dims);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so that relu kinks stay out of reach of the
// finite-difference step.
inline Tensor<double> kink_free_tensor(const Shape& dims, Rng& rng) {
  Tensor<double> t(dims);
  for (auto& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline CheckOutcome grad_outcome(const std::string& name, const GradCheckResult& r) {
  std::ostringstream os;
  os << "max rel error " << r.max_rel_error << " over " << r.checked << " coordinates";
  if (r.refined || r.skipped) os << ", " << r.refined << " refined, " << r.skipped << " skipped";
  if (!r.worst_param.empty())
    os << " (worst " << r.worst_param << ": analytic " << r.worst_analytic << ", numeric " << r.worst_numeric << ")";
  // a handful of coordinates sitting on a kink is expected; more is suspicious
  const bool enough = r.skipped * 20 <= r.checked + r.skipped;
  return {name, r.max_rel_error < kGradTolerance && enough, os.str()};
}

}  // namespace detail

/// Layer-level gradient checks. Inputs are treated as parameters so that the
/// input gradients are verified along with the weight gradients.
inline std::vector<CheckOutcome> check_layer_gradients(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  Rng rng(seed);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.step = 1e-4;

  {  // conv, stride 1 and 2
    for (std::size_t stride : {1u, 2u}) {
      ParamStore<double> p;
      const auto ix = p.add("input", {3, 6, 6});
      const auto iw = p.add("weight", {4, 3, 3, 3});
      const auto ib = p.add("bias", {4});
      for (auto i : {ix, iw, ib}) p[i].value = detail::random_tensor(p[i].value.dims(), rng, -1, 1);
      const std::size_t o = stride == 1 ? 6 : 3;
      const auto r = detail::random_tensor({4, o, o}, rng, -1, 1);
      const auto res = grad_check(
          p,
          [&](ParamStore<double>& s, bool g) {
            const auto y = conv2d_forward(s.value(ix), s.value(iw), s.value(ib), stride, 1);
            if (g) {
              auto gr = conv2d_backward(r, s.value(ix), s.value(iw), stride, 1, true);
              s.accumulate_grad(ix, gr.grad_input);
              s.accumulate_grad(iw, gr.grad_weight);
              s.accumulate_grad(ib, gr.grad_bias);
            }
            return detail::dot(y, r);
          },
          opt);
      out.push_back(detail::grad_outcome("layer conv stride " + std::to_string(stride), res));
    }
  }

  for (auto kind : {Activation::relu, Activation::tanh}) {
    ParamStore<double> p;
    const auto ix = p.add("input", {2, 4, 4});
    p[ix].value = detail::kink_free_tensor({2, 4, 4}, rng);
    const auto r = detail::random_tensor({2, 4, 4}, rng, -1, 1);
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          const auto y = activation_forward(s.value(ix), kind);
          if (g) s.accumulate_grad(ix, activation_backward(r, y, kind));
          return detail::dot(y, r);
        },
        opt);
    out.push_back(detail::grad_outcome(std::string("layer ") + activation_name(kind), res));
  }

  {
    ParamStore<double> p;
    const auto ix = p.add("input", {2, 3, 3});
    p[ix].value = detail::random_tensor({2, 3, 3}, rng, -1, 1);
    const auto r = detail::random_tensor({2, 6, 6}, rng, -1, 1);
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          if (g) s.accumulate_grad(ix, upsample_nearest2_backward(r));
          return detail::dot(upsample_nearest2_forward(s.value(ix)), r);
        },
        opt);
    out.push_back(detail::grad_outcome("layer upsample", res));
  }

  for (auto kind : {PoolKind::average, PoolKind::max}) {
    ParamStore<double> p;
    const auto ix = p.add("input", {2, 4, 4});
    // Distinct values keep the max taps unambiguous.
    auto& v = p[ix].value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) * 0.1;
    for (std::size_t i = v.size(); i-- > 1;) std::swap(v[i], v[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    const auto r = detail::random_tensor({2, 2, 2}, rng, -1, 1);
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          if (g) s.accumulate_grad(ix, pool_backward(r, s.value(ix), 2, kind));
          return detail::dot(pool_forward(s.value(ix), 2, kind), r);
        },
        opt);
    out.push_back(detail::grad_outcome(kind == PoolKind::max ? "layer maxpool" : "layer avgpool", res));
  }

  {
    ParamStore<double> p;
    const auto ia = p.add("a", {2, 3, 3});
    const auto ib = p.add("b", {3, 3, 3});
    const auto iv = p.add("v", {5, 1, 1});
    for (auto i : {ia, ib, iv}) p[i].value = detail::random_tensor(p[i].value.dims(), rng, -1, 1);
    const auto r = detail::random_tensor({5, 3, 3}, rng, -1, 1);
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          auto y = concat_channels({&s.value(ia), &s.value(ib)});
          add_channel_broadcast(y, s.value(iv));
          if (g) {
            s.accumulate_grad(ia, slice_channels(r, 0, 2));
            s.accumulate_grad(ib, slice_channels(r, 2, 3));
            s.accumulate_grad(iv, channel_sum(r, {5, 1, 1}));
          }
          return detail::dot(y, r);
        },
        opt);
    out.push_back(detail::grad_outcome("layer concat/broadcast", res));
  }

  for (auto m : kAllResampleMethods) {
    ParamStore<double> p;
    const auto ix = p.add("input", {1, 6, 6});
    auto& v = p[ix].value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.2 + 0.6 * static_cast<double>(i) / 36.0;
    for (std::size_t i = v.size(); i-- > 1;) std::swap(v[i], v[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    const auto r = detail::random_tensor({1, 3, 3}, rng, -1, 1);
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          if (g) s.accumulate_grad(ix, resize_backward(r, s.value(ix), m));
          return detail::dot(resize(s.value(ix), m, 3, 3), r);
        },
        opt);
    out.push_back(detail::grad_outcome("layer resample " + std::string(method_name(m)), res));
  }
  return out;
}

/// Tiny network specs used for gradient checks.
inline ModelSpec tiny_model_spec() {
  ModelSpec s;
  s.curve.width = 4;
  s.noise.width = 4;
  s.denoise.width = 4;
  s.denoise.blocks = 2;
  s.low_res = 8;
  return s;
}

namespace detail {

template <typename Net>
ParamStore<double> random_params(const Net& net, Rng& rng) {
  auto p = net.make_params();
  kaiming_init(p, rng);
  // Nonzero biases so that every parameter gradient is exercised.
  for (auto& e : p)
    if (e.value.rank() == 1)
      for (auto& v : e.value.data()) v = rng.uniform(-0.1, 0.1);
  return p;
}

}  // namespace detail

inline CheckOutcome grad_check_curve_net(std::uint64_t seed, const CurveNetSpec& spec = tiny_model_spec().curve) {
  Rng rng(seed);
  CurveNet<double> net(spec);
  auto p = detail::random_params(net, rng);
  const auto x = detail::random_tensor({3, 8, 8}, rng, 0, 1);
  const auto r = detail::random_tensor({kCurveChannels, 8, 8}, rng, -1, 1);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.step = 1e-4;
  const auto res = grad_check(
      p,
      [&](ParamStore<double>& s, bool g) {
        typename CurveNet<double>::Cache c;
        const auto y = net.forward(s, x, &c);
        if (g) net.backward(s, r, c);
        return detail::dot(y, r);
      },
      opt);
  return detail::grad_outcome("curve estimator", res);
}

inline CheckOutcome grad_check_noise_net(std::uint64_t seed, const NoiseNetSpec& spec = tiny_model_spec().noise) {
  Rng rng(seed);
  NoiseNet<double> net(spec);
  auto p = detail::random_params(net, rng);
  const auto x_t = detail::random_tensor({kCurveChannels, 8, 8}, rng, -2, 2);
  const auto low = detail::random_tensor({3, 8, 8}, rng, 0, 1);
  const auto cond = detail::random_tensor({kCurveChannels, 8, 8}, rng, -1, 1);
  const auto r = detail::random_tensor({kCurveChannels, 8, 8}, rng, -1, 1);
  const int t = static_cast<int>(rng.uniform_int(1, 100));
  GradCheckOptions opt;
  opt.seed = seed;
  opt.step = 1e-4;
  const auto res = grad_check(
      p,
      [&](ParamStore<double>& s, bool g) {
        typename NoiseNet<double>::Cache c;
        const auto y = net.forward(s, x_t, low, cond, t, 100, &c);
        if (g) net.backward(s, r, c);
        return detail::dot(y, r);
      },
      opt);
  return detail::grad_outcome("noise predictor", res);
}

inline CheckOutcome grad_check_denoiser(std::uint64_t seed, const DenoiserSpec& spec = tiny_model_spec().denoise) {
  Rng rng(seed);
  Denoiser<double> net(spec);
  auto p = detail::random_params(net, rng);
  const auto x = detail::random_tensor({3, 8, 8}, rng, 0, 1);
  const auto r = detail::random_tensor({3, 8, 8}, rng, -1, 1);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.step = 1e-4;
  const auto res = grad_check(
      p,
      [&](ParamStore<double>& s, bool g) {
        typename Denoiser<double>::Cache c;
        const auto y = net.forward(s, x, &c);
        if (g) net.backward(s, r, c);
        return detail::dot(y, r);
      },
      opt);
  return detail::grad_outcome("denoiser", res);
}

/// Curve estimator, curve upsampling and the denoised curve chain end to end.
/// Random linear functionals of the final and intermediate images stand in
/// for the losses, which are checked separately.
inline CheckOutcome grad_check_curve_chain(std::uint64_t seed) {
  Rng rng(seed);
  auto spec = tiny_model_spec();
  spec.denoise.blocks = 1;
  CurveNet<double> cnet(spec.curve);
  Denoiser<double> dnet(spec.denoise);
  auto pc = detail::random_params(cnet, rng);
  auto pd = detail::random_params(dnet, rng);
  // small tail keeps intermediates off the clamp; inner layers keep their
  // scale so relu inputs stay away from zero
  for (auto& e : pd)
    if (e.name.rfind("tail", 0) == 0)
      for (auto& v : e.value.data()) v *= 0.1;
  ParamStore<double> all;
  for (const auto* src : {&pc, &pd}) {
    const std::string prefix = src == &pc ? "curve." : "denoise.";
    for (const auto& e : *src) all[all.add(prefix + e.name, e.value.dims())].value = e.value;
  }
  const Shape img{3, 8, 8};
  const auto low = detail::random_tensor(img, rng, 0.2, 0.6);
  const auto low_bar = resize(low, ResampleMethod::bilinear, 4, 4);
  const auto r_final = detail::random_tensor(img, rng, -1, 1);
  std::vector<Tensor<double>> r_inter;
  for (std::size_t s = 0; s < kCurveStages; ++s) r_inter.push_back(detail::random_tensor(img, rng, -0.2, 0.2));

  const auto split = [&](const ParamStore<double>& s) {
    for (std::size_t i = 0; i < pc.size(); ++i) pc[i].value = s[i].value;
    for (std::size_t i = 0; i < pd.size(); ++i) pd[i].value = s[pc.size() + i].value;
  };
  GradCheckOptions opt;
  opt.seed = seed;
  opt.step = 1e-4;
  const auto res = grad_check(
      all,
      [&](ParamStore<double>& s, bool g) {
        split(s);
        typename CurveNet<double>::Cache cc;
        const auto c_low = cnet.forward(pc, low_bar, &cc);
        const auto curves = upsample_curve(c_low, 8, 8);
        CurveChainCache<double> chain_cache;
        const auto chain = le_chain<double>(low, curves, &dnet, &pd, &chain_cache);
        double loss = detail::dot(chain.final, r_final);
        for (std::size_t k = 0; k < kCurveStages; ++k) loss += detail::dot(chain.intermediates[k], r_inter[k]);
        if (g) {
          pc.zero_grad();
          pd.zero_grad();
          const auto g_curves = le_chain_backward<double>(r_final, r_inter, curves, chain_cache, &dnet, &pd);
          cnet.backward(pc, upsample_curve_backward(g_curves, c_low), cc);
          for (std::size_t i = 0; i < pc.size(); ++i) s[i].grad += pc[i].grad;
          for (std::size_t i = 0; i < pd.size(); ++i) s[pc.size() + i].grad += pd[i].grad;
        }
        return loss;
      },
      opt);
  return detail::grad_outcome("curve chain", res);
}

/// Gradients of the image-space losses with respect to their image inputs.
inline std::vector<CheckOutcome> check_loss_gradients(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  Rng rng(seed);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.step = 1e-4;
  const Shape img{3, 8, 8};
  {
    ParamStore<double> p;
    const auto ix = p.add("enhanced", img);
    p[ix].value = detail::random_tensor(img, rng, 0, 1);
    const auto target = detail::random_tensor(img, rng, 0, 1);
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          if (g) s.accumulate_grad(ix, rms_distance_grad(s.value(ix), target));
          return loss_sup(s.value(ix), target);
        },
        opt);
    out.push_back(detail::grad_outcome("loss sup", res));
  }
  {
    ParamStore<double> p;
    const auto ic = p.add("x0", {kCurveChannels, 4, 4});
    p[ic].value = detail::random_tensor(p[ic].value.dims(), rng, -0.8, 0.8);
    const auto low = detail::random_tensor(img, rng, 0.05, 0.5);
    const auto target = detail::random_tensor(img, rng, 0.3, 0.9);
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          auto b = loss_bootstrap(low, s.value(ic), target, g);
          if (g) s.accumulate_grad(ic, b.grad_x0);
          return b.loss;
        },
        opt);
    out.push_back(detail::grad_outcome("loss bootstrap", res));
  }
  {
    ParamStore<double> p;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < kCurveStages; ++k) {
      idx.push_back(p.add("stage" + std::to_string(k + 1), img));
      // well separated values keep max-pool taps and bicubic clamps stable
      auto& v = p[idx.back()].value;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.3 + 0.4 * static_cast<double>(i) / static_cast<double>(v.size());
      for (std::size_t i = v.size(); i-- > 1;) std::swap(v[i], v[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    }
    const auto pair_seed = rng.next_u64();
    const auto res = grad_check(
        p,
        [&](ParamStore<double>& s, bool g) {
          std::vector<Tensor<double>> inter;
          for (auto i : idx) inter.push_back(s.value(i));
          Rng pr(pair_seed);
          auto r = loss_self(inter, pr, g);
          if (g)
            for (std::size_t k = 0; k < idx.size(); ++k) s.accumulate_grad(idx[k], r.grads[k]);
          return r.loss;
        },
        opt);
    out.push_back(detail::grad_outcome("loss self", res));
  }
  return out;
}

/// Range and monotonicity of the LE-curve over random (y, c) pairs.
inline std::vector<CheckOutcome> check_curve_invariants(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed);
  std::size_t range_bad = 0, mono_bad = 0;
  double worst = 0.0;
  const auto f = [](double y, double c) { return y + c * y * (1.0 - y); };
  for (std::size_t i = 0; i < samples; ++i) {
    const double y = rng.uniform(), c = rng.uniform(-1.0, 1.0);
    const Tensor<double> ty({1, 1, 1}, y), tc({1, 1, 1}, c);
    const double v = le_step(ty, tc)[0];
    if (v < -1e-7 || v > 1.0 + 1e-7) {
      ++range_bad;
      worst = std::max(worst, std::max(-v, v - 1.0));
    }
    const double y2 = rng.uniform();
    const double lo = std::min(y, y2), hi = std::max(y, y2);
    if (f(lo, c) > f(hi, c)) ++mono_bad;
  }
  return {{"curve range", range_bad == 0,
           std::to_string(range_bad) + " violations in " + std::to_string(samples) + " samples"},
          {"curve monotonicity", mono_bad == 0,
           std::to_string(mono_bad) + " violations in " + std::to_string(samples) + " samples"}};
}

inline std::vector<CheckOutcome> check_diffusion_identities(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  Rng rng(seed);
  const auto sched = make_schedule(100, 1e-3, 0.2);
  const Shape dims{kCurveChannels, 4, 4};

  double round_trip = 0.0;
  for (int t : {1, 25, 50, 100}) {
    const auto x0 = detail::random_tensor(dims, rng, -1, 1);
    const auto eps = rng.normal_tensor<double>(dims);
    const auto x_t = forward_sample(x0, t, eps, sched);
    round_trip = std::max(round_trip, max_abs_diff(predict_x0_unclamped(x_t, eps, t, sched), x0));
  }
  out.push_back({"diffusion round trip", round_trip <= 1e-5, "max error " + std::to_string(round_trip)});

  const auto x0 = detail::random_tensor(dims, rng, -1, 1);
  const auto cfg = make_sampler(100, 10, 0.0);
  auto x = rng.normal_tensor<double>(dims);
  for (std::size_t k = cfg.timesteps.size(); k-- > 0;) {
    const int t = cfg.timesteps[k], t_prev = k == 0 ? 0 : cfg.timesteps[k - 1];
    x = reverse_step(x, x0, t, t_prev, cfg, Tensor<double>(dims), sched);
  }
  const double chain = max_abs_diff(x, x0);
  out.push_back({"ddim oracle chain", chain <= 1e-4, "max error " + std::to_string(chain)});
  return out;
}

/// Sample mean and variance of forward_sample over many noise draws against
/// N(sqrt(ab) x0, (1 - ab)), each within 3 standard errors.
inline std::vector<CheckOutcome> check_forward_moments(std::uint64_t seed, std::size_t draws = 100000) {
  std::vector<CheckOutcome> out;
  Rng rng(seed);
  const int T = 100;
  const auto sched = make_schedule(T, 1e-3, 0.2);
  const double x0v = rng.uniform(-1.0, 1.0);
  const Tensor<double> x0({draws}, x0v);
  for (int t : {1, T / 2, T}) {
    const auto x_t = forward_sample(x0, t, rng.normal_tensor<double>({draws}), sched);
    const double ab = sched.alpha_bar(t), n = static_cast<double>(draws);
    double m = 0.0;
    for (auto v : x_t.data()) m += v;
    m /= n;
    double var = 0.0;
    for (auto v : x_t.data()) var += (v - m) * (v - m);
    var /= n - 1.0;
    const double mean_z = (m - std::sqrt(ab) * x0v) / std::sqrt((1.0 - ab) / n);
    const double var_z = (var - (1.0 - ab)) / ((1.0 - ab) * std::sqrt(2.0 / (n - 1.0)));
    std::ostringstream os;
    os << "t=" << t << " mean z " << mean_z << ", variance z " << var_z;
    out.push_back({"forward moments t=" + std::to_string(t), std::abs(mean_z) < 3.0 && std::abs(var_z) < 3.0, os.str()});
  }
  return out;
}

/// Runs the whole suite, printing one line per property. Returns true iff all pass.
inline bool run_selfcheck(std::ostream& os, std::size_t seeds = 3, std::uint64_t base_seed = 0) {
  std::vector<CheckOutcome> all;
  for (std::uint64_t s = base_seed; s < base_seed + seeds; ++s) {
    for (auto& o : check_layer_gradients(s)) all.push_back(std::move(o));
    all.push_back(grad_check_curve_net(s));
    all.push_back(grad_check_noise_net(s));
    all.push_back(grad_check_denoiser(s));
    all.push_back(grad_check_curve_chain(s));
    for (auto& o : check_loss_gradients(s)) all.push_back(std::move(o));
  }
  for (auto& o : check_curve_invariants(base_seed + 7, 1000000)) all.push_back(std::move(o));
  for (auto& o : check_diffusion_identities(base_seed + 7)) all.push_back(std::move(o));
  for (auto& o : check_forward_moments(base_seed + 7)) all.push_back(std::move(o));

  std::vector<std::string> failed;
  for (const auto& o : all) {
    os << (o.passed ? "PASS  " : "FAIL  ") << o.name << ": " << o.detail << '\n';
    if (!o.passed && std::find(failed.begin(), failed.end(), o.name) == failed.end()) failed.push_back(o.name);
  }
  if (failed.empty()) {
    os << "selfcheck: all " << all.size() << " checks passed\n";
    return true;
  }
  os << "selfcheck: failed properties:";
  for (const auto& f : failed) os << "\n  " << f;
  os << '\n';
  return false;
}

}  // namespace bdce
