#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bdce/bdce.hpp"

namespace fs = std::filesystem;
using namespace bdce;

namespace {

enum Exit { kOk = 0, kSelfcheckFailed = 1, kConfigError = 2, kNumericError = 3, kCheckpointError = 4 };

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string config_path_for(const std::string& checkpoint) { return checkpoint + ".conf"; }

// Config for a checkpoint: explicit path, else the file written next to it,
// else defaults.
TrainConfig inference_config(const std::string& checkpoint, const std::string& explicit_path) {
  if (!explicit_path.empty()) return load_config(explicit_path);
  const auto sidecar = config_path_for(checkpoint);
  if (fs::exists(sidecar)) return load_config(sidecar);
  return TrainConfig{};
}

Networks load_networks(const std::string& checkpoint, const TrainConfig& cfg, bool explicit_spec) {
  return Networks::load(checkpoint, cfg.model.low_res, explicit_spec ? &cfg.model : nullptr);
}

std::vector<Image> load_training_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("data directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("data directory '" + dir + "' holds no .png images");
  std::vector<Image> images;
  for (const auto& f : files) images.push_back(load_png(f.string()));
  return images;
}

struct TrainArgs {
  std::string config, out, data, log;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  unsigned threads = default_threads();
  bool no_diffusion = false, no_denoiser = false, no_self_loss = false;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.no_diffusion) cfg.use_diffusion = false;
  if (a.no_denoiser) cfg.use_denoiser = false;
  if (a.no_self_loss) cfg.use_self_loss = false;
  cfg.validate();
  const auto images = load_training_images(a.data);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw IoError("cannot open log file '" + a.log + "'");
    log = &log_file;
  }
  auto nets = Networks::initialized(cfg.model, cfg.seed);
  std::cerr << "seed " << cfg.seed << ", " << images.size() << " images, parameters: curve "
            << nets.curve_params.parameter_count() << ", noise " << nets.noise_params.parameter_count()
            << ", denoise " << nets.denoise_params.parameter_count() << '\n';
  train(nets, images, cfg, log, a.threads);
  nets.save(a.out);
  std::ofstream conf(config_path_for(a.out));
  if (!conf) throw IoError("cannot write '" + config_path_for(a.out) + "'");
  conf << format_config(cfg);
  std::cerr << "wrote " << a.out << " and " << config_path_for(a.out) << '\n';
  return kOk;
}

struct InferArgs {
  std::string checkpoint, config;
  std::optional<std::uint64_t> seed;
  bool no_diffusion = false, no_denoiser = false;
  unsigned threads = default_threads();
};

InferenceOptions inference_options(const InferArgs& a, const TrainConfig& cfg) {
  auto opt = InferenceOptions::from(cfg);
  if (a.seed) opt.seed = *a.seed;
  if (a.no_diffusion) opt.use_diffusion = false;
  if (a.no_denoiser) opt.use_denoiser = false;
  return opt;
}

int cmd_enhance(const InferArgs& a, const std::string& in, const std::string& out) {
  const auto cfg = inference_config(a.checkpoint, a.config);
  const auto nets = load_networks(a.checkpoint, cfg, !a.config.empty());
  const auto img = load_png(in);
  EnhanceStats st;
  const auto result = enhance(img, nets, inference_options(a, cfg), &st);
  save_png(result, out);
  std::printf("size\t%zux%zu\n", img.width(), img.height());
  std::printf("network_ms\t%.3f\n", st.network_ms);
  std::printf("fullres_ms\t%.3f\n", st.fullres_ms);
  std::printf("network_macs\t%llu\n", static_cast<unsigned long long>(st.network_macs));
  return kOk;
}

std::string fmt_metric(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_eval(const InferArgs& a, const std::string& dir) {
  const auto cfg = inference_config(a.checkpoint, a.config);
  const auto nets = load_networks(a.checkpoint, cfg, !a.config.empty());
  const auto opt = inference_options(a, cfg);
  if (!fs::is_directory(dir)) throw ConfigError("pairs directory '" + dir + "' does not exist");

  std::map<std::string, std::pair<fs::path, fs::path>> pairs;
  const std::string low_suffix = "_low.png", gt_suffix = "_gt.png";
  const auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (ends_with(name, low_suffix))
      pairs[name.substr(0, name.size() - low_suffix.size())].first = e.path();
    else if (ends_with(name, gt_suffix))
      pairs[name.substr(0, name.size() - gt_suffix.size())].second = e.path();
    else if (e.path().extension() == ".png")
      std::cerr << "warning: " << name << " does not follow <stem>_low.png / <stem>_gt.png, skipped\n";
  }

  std::printf("pair\tinput_psnr\tinput_ssim\toutput_psnr\toutput_ssim\n");
  double sums[4] = {0, 0, 0, 0};
  std::size_t rows = 0;
  for (const auto& [stem, p] : pairs) {
    if (p.first.empty() || p.second.empty()) {
      std::cerr << "warning: " << stem << " has no " << (p.first.empty() ? low_suffix : gt_suffix)
                << " partner, skipped\n";
      continue;
    }
    const auto low = load_png(p.first.string());
    const auto gt = load_png(p.second.string());
    if (low.dims() != gt.dims()) {
      std::cerr << "warning: " << stem << " pair differs in size, skipped\n";
      continue;
    }
    const auto out = enhance(low, nets, opt);
    const double m[4] = {psnr(low, gt), ssim(low, gt), psnr(out, gt), ssim(out, gt)};
    std::printf("%s\t%s\t%s\t%s\t%s\n", stem.c_str(), fmt_metric(m[0]).c_str(), fmt_metric(m[1]).c_str(),
                fmt_metric(m[2]).c_str(), fmt_metric(m[3]).c_str());
    for (int k = 0; k < 4; ++k) sums[k] += m[k];
    ++rows;
  }
  if (rows > 0) {
    const double n = static_cast<double>(rows);
    std::printf("mean\t%s\t%s\t%s\t%s\n", fmt_metric(sums[0] / n).c_str(), fmt_metric(sums[1] / n).c_str(),
                fmt_metric(sums[2] / n).c_str(), fmt_metric(sums[3] / n).c_str());
  }
  return kOk;
}

int cmd_bench(const InferArgs& a, const std::vector<std::size_t>& sizes, int repeats) {
  const auto cfg = inference_config(a.checkpoint, a.config);
  const auto nets = load_networks(a.checkpoint, cfg, !a.config.empty());
  const auto opt = inference_options(a, cfg);
  std::printf("low_res\t%zu\n", nets.spec.low_res);
  std::printf("sampler_steps\t%d\n", opt.use_diffusion ? opt.sampler.num_steps : 0);
  std::printf("size\tpixels\tnetwork_macs\tnetwork_ms\tfullres_ms\n");
  std::vector<double> px, ms;
  std::vector<std::uint64_t> macs;
  Rng rng(opt.seed);
  for (auto s : sizes) {
    const auto img = make_synthetic_clean(s, s, rng);
    EnhanceStats best;
    for (int r = 0; r < repeats; ++r) {
      EnhanceStats st;
      enhance(img, nets, opt, &st);
      if (r == 0 || st.fullres_ms < best.fullres_ms) best = st;
    }
    std::printf("%zu\t%zu\t%llu\t%.3f\t%.3f\n", s, s * s, static_cast<unsigned long long>(best.network_macs),
                best.network_ms, best.fullres_ms);
    std::fflush(stdout);
    px.push_back(static_cast<double>(s * s));
    ms.push_back(best.fullres_ms);
    macs.push_back(best.network_macs);
  }
  const bool same = std::all_of(macs.begin(), macs.end(), [&](auto m) { return m == macs.front(); });
  std::printf("network_macs_identical\t%s\n", same ? "yes" : "no");
  if (px.size() >= 2) std::printf("fullres_linear_r2\t%.6f\n", linear_fit(px, ms).r2);
  return same ? kOk : kSelfcheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bootstrap diffusion curve estimation for low-light enhancement"};
  app.require_subcommand(1, 1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train all networks on synthetic pairs from clean images");
  train_cmd->add_option("config", ta.config, "Config file")->required();
  train_cmd->add_option("checkpoint", ta.out, "Output checkpoint path")->required();
  train_cmd->add_option("data_dir", ta.data, "Directory of clean PNG images")->required();
  train_cmd->add_option("--log", ta.log, "Run log path (default stdout)");
  train_cmd->add_option("--seed", ta.seed, "Override the config seed");
  train_cmd->add_option("--iterations", ta.iterations, "Override the config iteration count");
  train_cmd->add_option("--threads", ta.threads, "Worker threads")->check(CLI::PositiveNumber);
  train_cmd->add_flag("--no-diffusion", ta.no_diffusion, "Disable the diffusion branch");
  train_cmd->add_flag("--no-denoiser", ta.no_denoiser, "Disable the denoiser");
  train_cmd->add_flag("--no-self-loss", ta.no_self_loss, "Disable the self-consistency loss");

  InferArgs ia;
  std::string in_path, out_path, pairs_dir;
  std::vector<std::size_t> sizes{512, 1024, 2048};
  int repeats = 2;
  const auto add_infer = [&](CLI::App* c) {
    c->add_option("checkpoint", ia.checkpoint, "Checkpoint path")->required();
    c->add_option("--config", ia.config, "Config file (default <checkpoint>.conf)");
    c->add_option("--seed", ia.seed, "Sampling seed");
    c->add_option("--threads", ia.threads, "Worker threads")->check(CLI::PositiveNumber);
    c->add_flag("--no-diffusion", ia.no_diffusion, "Use the curve estimator's curves directly");
    c->add_flag("--no-denoiser", ia.no_denoiser, "Skip the denoiser");
  };
  auto* enhance_cmd = app.add_subcommand("enhance", "Enhance one PNG image");
  add_infer(enhance_cmd);
  enhance_cmd->add_option("input", in_path, "Input PNG")->required();
  enhance_cmd->add_option("output", out_path, "Output PNG")->required();

  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM over <stem>_low.png / <stem>_gt.png pairs");
  add_infer(eval_cmd);
  eval_cmd->add_option("pairs_dir", pairs_dir, "Directory of pairs")->required();

  std::size_t check_seeds = 3;
  std::uint64_t check_seed = 0;
  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "Gradient checks and invariants");
  selfcheck_cmd->add_option("--seeds", check_seeds, "Random seeds per gradient check")->check(CLI::PositiveNumber);
  selfcheck_cmd->add_option("--seed", check_seed, "First seed");

  auto* bench_cmd = app.add_subcommand("bench-resolution", "Network vs full-resolution cost across sizes");
  add_infer(bench_cmd);
  bench_cmd->add_option("--sizes", sizes, "Square image sizes")->delimiter(',');
  bench_cmd->add_option("--repeats", repeats, "Timing repeats per size (minimum kept)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*enhance_cmd) return cmd_enhance(ia, in_path, out_path);
    if (*eval_cmd) return cmd_eval(ia, pairs_dir);
    if (*selfcheck_cmd) return run_selfcheck(std::cout, check_seeds, check_seed) ? kOk : kSelfcheckFailed;
    if (*bench_cmd) return cmd_bench(ia, sizes, repeats);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << '\n';
    return kCheckpointError;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
