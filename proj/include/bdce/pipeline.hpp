#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <ostream>
#include <cmath>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bdce/checkpoint.hpp"
#include "bdce/config.hpp"
#include "bdce/curve.hpp"
#include "bdce/diffusion.hpp"
#include "bdce/losses.hpp"
#include "bdce/models.hpp"
#include "bdce/synth.hpp"

namespace bdce {

/// The three networks and their parameters.
struct Networks {
  ModelSpec spec;
  CurveNet<float> curve;
  NoiseNet<float> noise;
  Denoiser<float> denoise;
  ParamStore<float> curve_params;
  ParamStore<float> noise_params;
  ParamStore<float> denoise_params;

  explicit Networks(const ModelSpec& s)
      : spec(s),
        curve(s.curve),
        noise(s.noise),
        denoise(s.denoise),
        curve_params(curve.make_params()),
        noise_params(noise.make_params()),
        denoise_params(denoise.make_params()) {}

  /// Kaiming-initialised networks; each store draws from its own stream.
  static constexpr float kNoiseHeadScale = 0.1f;
  static constexpr float kDenoiseTailScale = 0.01f;

  static Networks initialized(const ModelSpec& s, std::uint64_t seed) {
    Networks n(s);
    Rng root(seed);
    Rng r1 = root.fork(1), r2 = root.fork(2), r3 = root.fork(3);
    kaiming_init(n.curve_params, r1);
    kaiming_init(n.noise_params, r2);
    kaiming_init(n.denoise_params, r3);
    // full-scale output heads saturate the clamp on the first step
    scale_weights(n.noise_params, n.noise.head().first, kNoiseHeadScale);
    scale_weights(n.denoise_params, n.denoise.head().first, kDenoiseTailScale);
    return n;
  }

  /// Zeroes every output layer: identity curves, zero noise, identity denoiser.
  void zero_heads() {
    zero_head(curve_params, curve.head());
    zero_head(noise_params, noise.head());
    zero_head(denoise_params, denoise.head());
  }

  std::vector<NamedTensor> to_checkpoint() const {
    std::vector<NamedTensor> out;
    append_store(out, "curve", curve_params);
    append_store(out, "noise", noise_params);
    append_store(out, "denoise", denoise_params);
    return out;
  }

  void save(const std::string& path) const { write_checkpoint(path, to_checkpoint()); }

  /// Rebuilds networks from checkpoint entries. Widths and block counts are
  /// recovered from tensor shapes; `expected`, when given, must agree.
  static Networks from_checkpoint(const std::vector<NamedTensor>& entries, std::size_t low_res,
                                  const ModelSpec* expected = nullptr) {
    const auto find = [&](const std::string& name) -> const Tensor<float>& {
      for (const auto& e : entries)
        if (e.name == name) return e.value;
      throw CheckpointError("checkpoint lacks entry '" + name + "'");
    };
    ModelSpec s;
    s.low_res = low_res;
    s.curve.width = find("curve.conv1.weight").dim(0);
    s.noise.width = find("noise.in.weight").dim(0);
    s.denoise.width = find("denoise.head.weight").dim(0);
    s.denoise.blocks = 0;
    while (true) {
      const auto name = "denoise.block" + std::to_string(s.denoise.blocks + 1) + ".conv1.weight";
      bool present = false;
      for (const auto& e : entries) present = present || e.name == name;
      if (!present) break;
      ++s.denoise.blocks;
    }
    if (expected) {
      const bool same = expected->curve.width == s.curve.width && expected->noise.width == s.noise.width &&
                        expected->denoise.width == s.denoise.width && expected->denoise.blocks == s.denoise.blocks;
      if (!same)
        throw CheckpointError("checkpoint architecture (curve " + std::to_string(s.curve.width) + ", noise " +
                              std::to_string(s.noise.width) + ", denoise " + std::to_string(s.denoise.width) + "x" +
                              std::to_string(s.denoise.blocks) + ") does not match the configured model");
    }
    Networks n(s);
    load_store(entries, "curve", n.curve_params);
    load_store(entries, "noise", n.noise_params);
    load_store(entries, "denoise", n.denoise_params);
    if (entries.size() != n.curve_params.size() + n.noise_params.size() + n.denoise_params.size())
      throw CheckpointError("checkpoint contains entries that belong to no network");
    return n;
  }

  static Networks load(const std::string& path, std::size_t low_res, const ModelSpec* expected = nullptr) {
    return from_checkpoint(read_checkpoint(path), low_res, expected);
  }
};

struct Optimizers {
  AdamState<float> curve, noise, denoise;

  Optimizers(const Networks& n, const AdamConfig& cfg)
      : curve(n.curve_params, cfg), noise(n.noise_params, cfg), denoise(n.denoise_params, cfg) {}
};

struct LossBreakdown {
  double simple = 0.0;
  double bootstrap = 0.0;
  double sup = 0.0;
  double self = 0.0;
  double total = 0.0;
};

inline NoiseSchedule schedule_for(const TrainConfig& cfg) {
  return make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
}

namespace detail {

struct SampleWork {
  ParamStore<float> curve, noise, denoise;
  LossBreakdown loss;
};

/// Forward and backward for one training pair. Parameter gradients land in
/// the work item's stores, which start as copies of the network parameters.
inline void train_sample(const PairedSample& sample, const Networks& nets, const TrainConfig& cfg,
                         const NoiseSchedule& sched, std::uint64_t diffusion_seed, std::uint64_t self_seed,
                         SampleWork& w) {
  const auto& low = sample.low;
  const auto& target = sample.normal;
  const std::size_t L = cfg.model.low_res;
  const Image low_bar = resize(low, ResampleMethod::bilinear, L, L);

  CurveNet<float>::Cache curve_cache;
  const auto c_bar = nets.curve.forward(w.curve, low_bar, &curve_cache);
  CurveMap<float> c_low = c_bar;
  CurveMap<float> g_low(c_bar.dims());

  // Diffusion branch: c_bar is the data sample and a condition; neither use is
  // differentiated. The x_t term of the x0 estimate carries gradient back to c_bar.
  NoiseNet<float>::Cache noise_cache;
  Tensor<float> eps, eps_hat, x0_raw;
  double ab = 1.0;
  if (cfg.use_diffusion) {
    Rng rng(diffusion_seed);
    const int t = static_cast<int>(rng.uniform_int(1, sched.steps()));
    ab = sched.alpha_bar(t);
    eps = rng.normal_tensor<float>(c_bar.dims());
    const auto x_t = forward_sample(c_bar, t, eps, sched);
    eps_hat = nets.noise.forward(w.noise, x_t, low_bar, c_bar, t, sched.steps(), &noise_cache);
    w.loss.simple = loss_simple(eps, eps_hat);
    x0_raw = predict_x0_unclamped(x_t, eps_hat, t, sched);
    c_low = clamp(x0_raw, -1.0f, 1.0f);
    auto boot = loss_bootstrap(low, c_low, target, true, cfg.lambda_boot);
    w.loss.bootstrap = boot.loss;
    g_low += boot.grad_x0;
  }

  const auto curves = upsample_curve(c_low, low.height(), low.width());
  CurveChainCache<float> chain_cache;
  const Denoiser<float>* den = cfg.use_denoiser ? &nets.denoise : nullptr;
  const auto chain = le_chain<float>(low, curves, den, cfg.use_denoiser ? &w.denoise : nullptr, &chain_cache);
  w.loss.sup = loss_sup(chain.final, target);
  const auto g_final = rms_distance_grad(chain.final, target, cfg.lambda_sup);
  std::vector<Tensor<float>> g_inter;
  if (cfg.use_self_loss) {
    Rng rng(self_seed);
    auto self = loss_self(chain.intermediates, rng, true, cfg.lambda_self);
    w.loss.self = self.loss;
    g_inter = std::move(self.grads);
  }
  const auto g_curves = le_chain_backward<float>(g_final, g_inter, curves, chain_cache, den,
                                                 cfg.use_denoiser ? &w.denoise : nullptr);
  g_low += upsample_curve_backward(g_curves, c_low);

  CurveMap<float> g_cbar = std::move(g_low);
  if (cfg.use_diffusion) {
    for (std::size_t i = 0; i < g_cbar.size(); ++i)
      if (x0_raw[i] < -1.0f || x0_raw[i] > 1.0f) g_cbar[i] = 0.0f;
    auto g_eps = loss_simple_grad(eps, eps_hat, cfg.lambda_simple);
    const auto k = static_cast<float>(-std::sqrt(1.0 - ab) / std::sqrt(ab));
    for (std::size_t i = 0; i < g_eps.size(); ++i) g_eps[i] += k * g_cbar[i];
    nets.noise.backward(w.noise, g_eps, noise_cache);
  }
  nets.curve.backward(w.curve, g_cbar, curve_cache);

  auto& l = w.loss;
  l.total = cfg.lambda_simple * l.simple + cfg.lambda_boot * l.bootstrap + cfg.lambda_sup * l.sup +
            cfg.lambda_self * l.self;
}

inline void reduce_grads(ParamStore<float>& dst, const std::vector<SampleWork>& work,
                         ParamStore<float> SampleWork::*member) {
  const float inv = 1.0f / static_cast<float>(work.size());
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& g = dst[i].grad;
    for (const auto& w : work) g += (w.*member)[i].grad;
    g *= inv;
  }
}

}  // namespace detail

/// Runs forward/backward over a batch and leaves batch-averaged gradients in
/// the networks' stores. Samples may be processed on up to `threads` threads;
/// gradients are reduced in sample order, so results do not depend on it.
inline LossBreakdown accumulate_gradients(const std::vector<PairedSample>& batch, Networks& nets,
                                          const TrainConfig& cfg, Rng& rng, unsigned threads = 1) {
  require(!batch.empty(), "train_step: empty batch");
  const auto sched = schedule_for(cfg);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 2 * batch.size(); ++i) seeds.push_back(rng.next_u64());

  std::vector<detail::SampleWork> work(batch.size());
  for (auto& w : work) {
    w.curve = nets.curve_params;
    w.noise = nets.noise_params;
    w.denoise = nets.denoise_params;
    w.curve.zero_grad();
    w.noise.zero_grad();
    w.denoise.zero_grad();
  }
  const auto run = [&](std::size_t i) {
    detail::train_sample(batch[i], nets, cfg, sched, seeds[2 * i], seeds[2 * i + 1], work[i]);
  };
  const std::size_t nthreads = std::clamp<std::size_t>(threads, 1, batch.size());
  if (nthreads == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    for (std::size_t k = 0; k < nthreads; ++k)
      pool.emplace_back([&, k] {
        try {
          for (std::size_t i = k; i < batch.size(); i += nthreads) run(i);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  LossBreakdown mean;
  for (const auto& w : work) {
    mean.simple += w.loss.simple;
    mean.bootstrap += w.loss.bootstrap;
    mean.sup += w.loss.sup;
    mean.self += w.loss.self;
    mean.total += w.loss.total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.simple *= inv;
  mean.bootstrap *= inv;
  mean.sup *= inv;
  mean.self *= inv;
  mean.total *= inv;
  if (!std::isfinite(mean.total)) {
    std::ostringstream os;
    os << "non-finite training loss: simple=" << mean.simple << " bootstrap=" << mean.bootstrap
       << " sup=" << mean.sup << " self=" << mean.self;
    throw NumericError(os.str());
  }

  nets.curve_params.zero_grad();
  nets.noise_params.zero_grad();
  nets.denoise_params.zero_grad();
  detail::reduce_grads(nets.curve_params, work, &detail::SampleWork::curve);
  if (cfg.use_diffusion) detail::reduce_grads(nets.noise_params, work, &detail::SampleWork::noise);
  if (cfg.use_denoiser) detail::reduce_grads(nets.denoise_params, work, &detail::SampleWork::denoise);
  for (const auto* store : {&nets.curve_params, &nets.noise_params, &nets.denoise_params})
    for (const auto& e : *store)
      if (!e.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  return mean;
}

/// One optimisation step of all active networks. Networks whose ablation flag
/// is off keep their parameters untouched.
inline LossBreakdown train_step(const std::vector<PairedSample>& batch, Networks& nets, Optimizers& opt,
                                const TrainConfig& cfg, Rng& rng, unsigned threads = 1) {
  const auto loss = accumulate_gradients(batch, nets, cfg, rng, threads);
  adam_step(nets.curve_params, opt.curve);
  if (cfg.use_diffusion) adam_step(nets.noise_params, opt.noise);
  if (cfg.use_denoiser) adam_step(nets.denoise_params, opt.denoise);
  return loss;
}

/// Draws a training batch from clean images: random image, optional random
/// crop, random gamma in [gamma_min, gamma_max], synthetic darkening.
inline std::vector<PairedSample> draw_batch(const std::vector<Image>& clean, const TrainConfig& cfg, Rng& rng) {
  require(!clean.empty(), "draw_batch: no training images");
  std::vector<PairedSample> batch;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const auto& src = clean[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(clean.size()) - 1))];
    Image img = src;
    const std::size_t crop = cfg.train_crop;
    if (crop > 0 && crop <= src.height() && crop <= src.width()) {
      const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(src.height() - crop)));
      const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(src.width() - crop)));
      img = Image::chw(3, crop, crop);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < crop; ++y)
          for (std::size_t x = 0; x < crop; ++x) img.at(c, y, x) = src.at(c, y0 + y, x0 + x);
    }
    if (img.height() % 2 || img.width() % 2) {
      // Drop a trailing row/column so every training image has even dims.
      Image even = Image::chw(3, img.height() & ~std::size_t{1}, img.width() & ~std::size_t{1});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < even.height(); ++y)
          for (std::size_t x = 0; x < even.width(); ++x) even.at(c, y, x) = img.at(c, y, x);
      img = std::move(even);
    }
    const double gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
    batch.push_back(synth_pair(img, gamma, cfg.noise_sigma, rng));
  }
  return batch;
}

struct InferenceOptions {
  bool use_diffusion = true;
  bool use_denoiser = true;
  SamplerConfig sampler;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;

  static InferenceOptions from(const TrainConfig& cfg) {
    InferenceOptions o;
    o.use_diffusion = cfg.use_diffusion;
    o.use_denoiser = cfg.use_denoiser;
    o.schedule = schedule_for(cfg);
    o.sampler = make_sampler(cfg.timesteps, cfg.sampler_steps, cfg.eta);
    o.seed = cfg.seed;
    return o;
  }
};

/// Where the time of one enhancement went. Network stages (curve estimation
/// and sampling at the fixed low resolution) are separated from stages whose
/// cost grows with the input size.
struct EnhanceStats {
  std::uint64_t network_macs = 0;
  std::uint64_t fullres_macs = 0;
  double network_ms = 0.0;
  double fullres_ms = 0.0;
};

/// Curve map at the fixed low resolution for an input image.
inline CurveMap<float> estimate_curves(const Image& low_bar, const Networks& nets, const InferenceOptions& opt) {
  auto curves = nets.curve.forward(nets.curve_params, low_bar);
  if (opt.use_diffusion)
    curves = sample_curves(low_bar, curves, nets.noise, nets.noise_params, opt.sampler, opt.schedule, opt.seed);
  return curves;
}

/// Full inference: resize to the internal resolution, estimate (and refine)
/// curves there, then apply them at the input resolution.
inline Image enhance(const Image& input, const Networks& nets, const InferenceOptions& opt,
                     EnhanceStats* stats = nullptr) {
  require_image(input, "enhance");
  using clock = std::chrono::steady_clock;
  const auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
  const std::size_t L = nets.spec.low_res;
  const std::size_t h = input.height(), w = input.width();

  auto t0 = clock::now();
  const Image low_bar = resize(input, ResampleMethod::bilinear, L, L);
  auto t1 = clock::now();
  const auto macs0 = mac_counter();
  const auto curves_low = estimate_curves(low_bar, nets, opt);
  const auto macs1 = mac_counter();
  auto t2 = clock::now();
  const auto curves = h >= L && w >= L ? upsample_curve(curves_low, h, w)
                                       : clamp(resize(curves_low, ResampleMethod::bilinear, h, w), -1.0f, 1.0f);
  Image out = opt.use_denoiser ? le_apply_denoised(input, curves, nets.denoise, nets.denoise_params).final
                               : le_apply(input, curves);
  out = clamp(std::move(out), 0.0f, 1.0f);
  auto t3 = clock::now();
  if (stats) {
    stats->network_macs = macs1 - macs0;
    stats->fullres_macs = mac_counter() - macs1;
    stats->network_ms = ms(t2 - t1);
    stats->fullres_ms = ms(t1 - t0) + ms(t3 - t2);
  }
  return out;
}

/// Formats one run-log line: step, the four losses, total, wall-ms.
inline std::string log_line(std::size_t step, const LossBreakdown& l, double wall_ms) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.3f", step, l.simple, l.bootstrap, l.sup,
                l.self, l.total, wall_ms);
  return buf;
}

/// Trains for cfg.iterations steps from the given clean images. Each step is
/// logged to `log` when non-null. Returns the last step's losses.
inline LossBreakdown train(Networks& nets, const std::vector<Image>& clean, const TrainConfig& cfg,
                           std::ostream* log = nullptr, unsigned threads = 1) {
  cfg.validate();
  Optimizers opt(nets, cfg.adam);
  Rng data_rng = Rng(cfg.seed).fork(11);
  Rng step_rng = Rng(cfg.seed).fork(12);
  LossBreakdown last;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= cfg.iterations; ++step) {
    const auto batch = draw_batch(clean, cfg, data_rng);
    last = train_step(batch, nets, opt, cfg, step_rng, threads);
    if (log) {
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      *log << log_line(step, last, ms) << '\n';
    }
  }
  if (log) log->flush();
  return last;
}

}  // namespace bdce
