#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "bdce/error.hpp"
#include "bdce/models.hpp"
#include "bdce/params.hpp"

namespace bdce {

/// Every hyperparameter of a training or inference run.
struct TrainConfig {
  ModelSpec model;
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int sampler_steps = 20;
  double eta = 0.0;

  double lambda_simple = 1.0;
  double lambda_boot = 1.0;
  double lambda_sup = 1.0;
  double lambda_self = 0.1;

  AdamConfig adam;
  std::size_t batch_size = 4;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;

  bool use_diffusion = true;
  bool use_denoiser = true;
  bool use_self_loss = true;

  // Synthetic degradation applied to clean training images.
  double gamma_min = 2.0;
  double gamma_max = 3.0;
  double noise_sigma = 0.05;
  std::size_t train_crop = 0;  // 0 keeps full images

  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "'");
}

struct ConfigField {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename N>
ConfigField number_field(N TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_number<N>(k, v); },
          [member](const TrainConfig& c) {
            std::ostringstream os;
            os.precision(17);
            os << c.*member;
            return os.str();
          }};
}

template <typename N, typename Get>
ConfigField nested_field(Get access) {
  return {[access](TrainConfig& c, const std::string& k, const std::string& v) { access(c) = parse_number<N>(k, v); },
          [access](const TrainConfig& c) {
            std::ostringstream os;
            os.precision(17);
            TrainConfig copy = c;
            os << access(copy);
            return os.str();
          }};
}

inline ConfigField bool_field(bool TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); },
          [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = {
      {"low_res", nested_field<std::size_t>([](TrainConfig& c) -> std::size_t& { return c.model.low_res; })},
      {"curve_width", nested_field<std::size_t>([](TrainConfig& c) -> std::size_t& { return c.model.curve.width; })},
      {"noise_width", nested_field<std::size_t>([](TrainConfig& c) -> std::size_t& { return c.model.noise.width; })},
      {"denoise_width",
       nested_field<std::size_t>([](TrainConfig& c) -> std::size_t& { return c.model.denoise.width; })},
      {"denoise_blocks",
       nested_field<std::size_t>([](TrainConfig& c) -> std::size_t& { return c.model.denoise.blocks; })},
      {"timesteps", number_field(&TrainConfig::timesteps)},
      {"beta_start", number_field(&TrainConfig::beta_start)},
      {"beta_end", number_field(&TrainConfig::beta_end)},
      {"sampler_steps", number_field(&TrainConfig::sampler_steps)},
      {"eta", number_field(&TrainConfig::eta)},
      {"lambda_simple", number_field(&TrainConfig::lambda_simple)},
      {"lambda_boot", number_field(&TrainConfig::lambda_boot)},
      {"lambda_sup", number_field(&TrainConfig::lambda_sup)},
      {"lambda_self", number_field(&TrainConfig::lambda_self)},
      {"lr", nested_field<double>([](TrainConfig& c) -> double& { return c.adam.lr; })},
      {"adam_beta1", nested_field<double>([](TrainConfig& c) -> double& { return c.adam.beta1; })},
      {"adam_beta2", nested_field<double>([](TrainConfig& c) -> double& { return c.adam.beta2; })},
      {"adam_eps", nested_field<double>([](TrainConfig& c) -> double& { return c.adam.eps; })},
      {"batch_size", number_field(&TrainConfig::batch_size)},
      {"iterations", number_field(&TrainConfig::iterations)},
      {"seed", number_field(&TrainConfig::seed)},
      {"use_diffusion", bool_field(&TrainConfig::use_diffusion)},
      {"use_denoiser", bool_field(&TrainConfig::use_denoiser)},
      {"use_self_loss", bool_field(&TrainConfig::use_self_loss)},
      {"gamma_min", number_field(&TrainConfig::gamma_min)},
      {"gamma_max", number_field(&TrainConfig::gamma_max)},
      {"noise_sigma", number_field(&TrainConfig::noise_sigma)},
      {"train_crop", number_field(&TrainConfig::train_crop)},
  };
  return fields;
}

}  // namespace detail

inline void TrainConfig::validate() const {
  const auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (model.low_res < 4 || model.low_res % 4 != 0) fail("low_res must be a positive multiple of 4");
  if (model.curve.width < 1 || model.noise.width < 1 || model.denoise.width < 1)
    fail("network widths must be positive");
  if (timesteps < 1) fail("timesteps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    fail("need 0 < beta_start <= beta_end < 1");
  if (sampler_steps < 1 || sampler_steps > timesteps) fail("sampler_steps must lie in [1, timesteps]");
  if (!(eta >= 0.0 && eta <= 1.0)) fail("eta must lie in [0, 1]");
  if (lambda_simple < 0 || lambda_boot < 0 || lambda_sup < 0 || lambda_self < 0) fail("loss weights must be >= 0");
  if (!(adam.lr >= 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0))
    fail("invalid optimizer settings");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(gamma_min >= 1.0 && gamma_min <= gamma_max)) fail("need 1 <= gamma_min <= gamma_max");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (train_crop % 2 != 0) fail("train_crop must be even");
}

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
inline TrainConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  TrainConfig cfg;
  std::string raw;
  int lineno = 0;
  const auto& fields = detail::config_fields();
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value': " + raw);
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError(where + "unknown key '" + key + "': " + raw);
    try {
      it->second.set(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what() + ": " + raw);
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(f, path);
}

inline std::string format_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace bdce
