// Acceptance run: one PASS/FAIL line per criterion, details on following
// indented lines. Exit status is 0 only if every criterion passes.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "bdce/bdce.hpp"
#include "bdce/selfcheck.hpp"

using namespace bdce;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;
  void fail(const std::string& why) {
    pass = false;
    notes.push_back("FAIL " + why);
  }
  void note(const std::string& s) { notes.push_back(s); }
  void expect(bool ok, const std::string& what) { ok ? note(what) : fail(what); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Verdict gradients() {
  Verdict v;
  const auto t0 = Clock::now();
  std::size_t ok = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (const auto& o : {grad_check_curve_net(seed), grad_check_noise_net(seed), grad_check_denoiser(seed)}) {
      ++total;
      if (o.passed)
        ++ok;
      else
        v.fail("seed " + std::to_string(seed) + " " + o.name + ": " + o.detail);
    }
  const double s = seconds_since(t0);
  v.note(std::to_string(ok) + "/" + std::to_string(total) + " network gradient checks below 1e-5");
  v.expect(s < 60.0, "runtime " + fmt("%.1f s (limit 60)", s));
  return v;
}

Verdict curve_math() {
  Verdict v;
  for (const auto& o : check_curve_invariants(2024, 1000000)) v.expect(o.passed, o.name + ": " + o.detail);
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> img = Tensor<double>::chw(3, 4, 4);
    CurveMap<double> curves = CurveMap<double>::chw(kCurveChannels, 4, 4);
    for (auto& x : img.data()) x = rng.uniform();
    for (auto& x : curves.data()) x = rng.uniform(-1, 1);
    const auto out = le_apply(img, curves);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
          double p = img.at(c, y, x);
          for (std::size_t n = 0; n < kCurveStages; ++n) {
            const double a = curves.at(n * 3 + c, y, x);
            p = p + a * p * (1 - p);
          }
          worst = std::max(worst, std::abs(p - out.at(c, y, x)));
        }
  }
  v.expect(worst <= 1e-6, "le_apply vs scalar 8-step oracle on 4x4: max error " + fmt("%.3g", worst));
  return v;
}

Verdict diffusion() {
  Verdict v;
  for (const auto& o : check_diffusion_identities(77)) v.expect(o.passed, o.name + ": " + o.detail);
  for (const auto& o : check_forward_moments(78)) v.expect(o.passed, o.name + ": " + o.detail);
  return v;
}

TrainConfig desk_config() {
  TrainConfig c;
  c.model.low_res = 32;
  c.model.curve.width = 16;
  c.model.noise.width = 16;
  c.model.denoise.width = 8;
  c.model.denoise.blocks = 3;
  c.timesteps = 100;
  c.beta_start = 1e-3;
  c.beta_end = 0.2;
  c.sampler_steps = 20;
  c.adam.lr = 1e-3;
  c.batch_size = 4;
  c.train_crop = 32;
  c.iterations = 3000;
  return c;
}

Verdict resolution() {
  Verdict v;
  const auto t0 = Clock::now();
  const auto cfg = desk_config();
  const auto nets = Networks::initialized(cfg.model, 1);
  const auto opt = InferenceOptions::from(cfg);
  Rng rng(5);
  std::vector<double> px, ms;
  std::vector<std::uint64_t> macs;
  for (std::size_t s : {512u, 1024u, 2048u}) {
    const auto img = make_synthetic_clean(s, s, rng);
    EnhanceStats best;
    for (int r = 0; r < 2; ++r) {
      EnhanceStats st;
      enhance(img, nets, opt, &st);
      if (r == 0 || st.fullres_ms < best.fullres_ms) best = st;
    }
    v.note(std::to_string(s) + "^2: network MACs " + std::to_string(best.network_macs) + ", network " +
           fmt("%.1f ms", best.network_ms) + ", full-res " + fmt("%.1f ms", best.fullres_ms));
    px.push_back(static_cast<double>(s * s));
    ms.push_back(best.fullres_ms);
    macs.push_back(best.network_macs);
  }
  v.expect(macs[0] == macs[1] && macs[1] == macs[2], "network MACs identical across sizes");
  const double r2 = linear_fit(px, ms).r2;
  v.expect(r2 > 0.95, "full-res time vs pixels R^2 " + fmt("%.4f", r2));
  const double s = seconds_since(t0);
  v.expect(s < 300.0, "runtime " + fmt("%.1f s (limit 300)", s));
  return v;
}

Verdict end_to_end(std::size_t iterations) {
  Verdict v;
  Rng gen(1234);
  std::vector<Image> clean;
  for (int i = 0; i < 20; ++i) clean.push_back(make_synthetic_clean(64, 64, gen));
  const std::vector<Image> train_set(clean.begin(), clean.begin() + 15);
  Rng test_rng(999);
  std::vector<PairedSample> held_out;
  for (int i = 15; i < 20; ++i) held_out.push_back(synth_pair(clean[i], test_rng.uniform(2.0, 3.0), 0.05, test_rng));
  double input = 0.0;
  for (const auto& p : held_out) input += psnr(p.low, p.normal) / held_out.size();
  v.note("held-out input PSNR " + fmt("%.3f dB", input));

  struct Variant {
    const char* name;
    std::function<void(TrainConfig&)> apply;
  };
  const std::vector<Variant> variants{
      {"full", [](TrainConfig&) {}},
      {"w/o diffusion", [](TrainConfig& c) { c.use_diffusion = false; }},
      {"w/o denoiser", [](TrainConfig& c) { c.use_denoiser = false; c.use_self_loss = false; }},
      {"w/o self loss", [](TrainConfig& c) { c.use_self_loss = false; }},
  };
  std::vector<double> scores;
  for (const auto& var : variants) {
    auto cfg = desk_config();
    cfg.iterations = iterations;
    var.apply(cfg);
    auto nets = Networks::initialized(cfg.model, cfg.seed);
    const auto t0 = Clock::now();
    train(nets, train_set, cfg, nullptr, 1);
    const double secs = seconds_since(t0);
    const auto opt = InferenceOptions::from(cfg);
    double out = 0.0;
    for (const auto& p : held_out) out += psnr(enhance(p.low, nets, opt), p.normal) / held_out.size();
    scores.push_back(out);
    v.note(std::string(var.name) + ": " + fmt("%.3f dB", out) + ", trained " + std::to_string(iterations) +
           " steps in " + fmt("%.0f s", secs));
    if (secs > 1800.0) v.fail(std::string(var.name) + " training exceeded 30 min");
  }
  v.expect(scores[0] >= input + 3.0, "full model gain " + fmt("%+.3f dB (need +3)", scores[0] - input));
  for (std::size_t i = 1; i < scores.size(); ++i)
    v.expect(scores[0] >= scores[i], std::string("full >= ") + variants[i].name + fmt(" (%+.3f dB)", scores[0] - scores[i]));
  return v;
}

Verdict self_loss() {
  Verdict v;
  Rng rng(3);
  std::size_t pairs = 0, nonzero = 0;
  for (std::size_t i = 0; i < kAllResampleMethods.size(); ++i)
    for (std::size_t j = i + 1; j < kAllResampleMethods.size(); ++j) {
      ++pairs;
      const Image img({3, 8, 8}, static_cast<float>(rng.uniform()));
      if (self_consistency(img, kAllResampleMethods[i], kAllResampleMethods[j]) != 0.0) ++nonzero;
    }
  v.expect(pairs == 15 && nonzero == 0,
           std::to_string(nonzero) + " of " + std::to_string(pairs) + " method pairs nonzero on constant input");
  Image board = Image::chw(3, 2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    board.at(c, 0, 1) = 1.0f;
    board.at(c, 1, 0) = 1.0f;
  }
  const double r = self_consistency(board, ResampleMethod::avgpool2, ResampleMethod::maxpool2);
  v.expect(r == 0.5, "checkerboard avgpool2 vs maxpool2 RMS " + fmt("%.9g", r));
  return v;
}

Verdict metrics() {
  Verdict v;
  const auto constant = [](float x) { return Image({3, 16, 16}, x); };
  const double p1 = psnr(constant(0), constant(0.5f));
  v.expect(std::abs(p1 - 10 * std::log10(4.0)) < 1e-6, "psnr 0 vs 0.5: " + fmt("%.9f", p1));
  const double p2 = psnr(constant(0), constant(1));
  v.expect(std::abs(p2) < 1e-6, "psnr 0 vs 1: " + fmt("%.9f", p2));
  v.expect(std::isinf(psnr(constant(0.3f), constant(0.3f))), "psnr identical is +inf");
  const double s1 = ssim(constant(0.2f), constant(0.2f));
  v.expect(std::abs(s1 - 1.0) < 1e-6, "ssim 0.2 vs 0.2: " + fmt("%.9f", s1));
  const double c1 = 0.01 * 0.01;
  const double expect = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  const double s2 = ssim(constant(0.25f), constant(0.75f));
  v.expect(std::abs(s2 - expect) < 1e-6, "ssim 0.25 vs 0.75: " + fmt("%.9f", s2) + " expected " + fmt("%.9f", expect));
  return v;
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string drop_last_column(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind('\t')) + '\n';
  return out;
}

Verdict determinism(const fs::path& work) {
  Verdict v;
  const auto dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir / "data");
  Rng rng(8);
  for (int i = 0; i < 4; ++i) save_png(make_synthetic_clean(32, 32, rng), (dir / "data" / ("c" + std::to_string(i) + ".png")).string());
  save_png(synth_pair(make_synthetic_clean(48, 40, rng), 2.5, 0.05, rng).low, (dir / "low.png").string());
  std::ofstream(dir / "run.conf") << "low_res = 16\ncurve_width = 8\nnoise_width = 8\ndenoise_width = 8\n"
                                     "timesteps = 100\nbeta_start = 0.001\nbeta_end = 0.2\nsampler_steps = 10\n"
                                     "batch_size = 2\niterations = 30\nseed = 21\ntrain_crop = 32\n";
  const std::string cli = std::string("'") + BDCE_CLI + "'";
  const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  for (const char* tag : {"a", "b"}) {
    const auto ck = dir / (std::string(tag) + ".ckpt");
    const int t = run(cli + " train " + q(dir / "run.conf") + " " + q(ck) + " " + q(dir / "data") + " --threads 1 --log " +
                      q(dir / (std::string(tag) + ".log")));
    const int e = run(cli + " enhance " + q(ck) + " " + q(dir / "low.png") + " " + q(dir / (std::string(tag) + ".png")) +
                      " --threads 1 --seed 4");
    if (t != 0 || e != 0) v.fail(std::string("run ") + tag + " exit codes train " + std::to_string(t) + ", enhance " + std::to_string(e));
  }
  if (!v.pass) return v;
  const auto la = slurp(dir / "a.log"), lb = slurp(dir / "b.log");
  v.expect(!la.empty() && drop_last_column(la) == drop_last_column(lb), "train logs identical apart from wall-ms");
  v.expect(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"), "checkpoints bit-identical");
  v.expect(slurp(dir / "a.png") == slurp(dir / "b.png"), "enhanced PNGs bit-identical");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  std::string workdir = "acceptance_work";
  std::size_t iterations = desk_config().iterations;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--iterations", iterations, "Training steps per variant for criterion 5");
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradients},
      {"curve math", curve_math},
      {"diffusion identities", diffusion},
      {"resolution independence", resolution},
      {"desk-scale end-to-end", [&] { return end_to_end(iterations); }},
      {"self-supervised loss", self_loss},
      {"metrics sanity", metrics},
      {"determinism", [&] { return determinism(workdir); }},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.fail(std::string("exception: ") + e.what());
    }
    all = all && v.pass;
    std::printf("%s criterion %d: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, seconds_since(t0));
    for (const auto& n : v.notes) std::printf("    %s\n", n.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
