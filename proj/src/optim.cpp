#include "nhsplat/optim.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <span>

#include "nhsplat/error.hpp"

namespace nhsplat {

using json = nlohmann::json;

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Position: return "position";
    case ParamGroup::LogScale: return "log_scale";
    case ParamGroup::Rotation: return "rotation";
    case ParamGroup::Opacity: return "opacity";
    case ParamGroup::Sh: return "sh";
    case ParamGroup::Luminance: return "luminance";
  }
  return "?";
}

double LearningRates::position_at(int iter, int total) const {
  if (total <= 0) return position;
  const double s = std::clamp(double(iter) / double(total), 0.0, 1.0);
  return std::exp((1.0 - s) * std::log(position) + s * std::log(position_final));
}

std::array<double, kParamGroupCount> LearningRates::at(int iter, int total) const {
  return {position_at(iter, total), log_scale, rotation, opacity, sh, luminance};
}

namespace {

template <class C>
auto group_array(C& c, int g) -> decltype((c.positions)) {
  switch (ParamGroup(g)) {
    case ParamGroup::Position: return c.positions;
    case ParamGroup::LogScale: return c.log_scales;
    case ParamGroup::Rotation: return c.rotations;
    case ParamGroup::Opacity: return c.opacity_logits;
    case ParamGroup::Sh: return c.sh;
    case ParamGroup::Luminance: return c.luminance;
  }
  return c.positions;
}

}  // namespace

void AdamState::reset_for(const GaussianCloud& cloud) {
  t = 0;
  for (int g = 0; g < kParamGroupCount; ++g) {
    const size_t n = group_array(cloud, g).size();
    m[g].assign(n, 0.0);
    v[g].assign(n, 0.0);
  }
}

void AdamState::remap(const GaussianCloud& cloud, const std::vector<long>& source) {
  if (source.size() != cloud.size()) throw InvalidArgument("adam remap: source size mismatch");
  for (int g = 0; g < kParamGroupCount; ++g) {
    const size_t n = group_array(cloud, g).size();
    const size_t stride = cloud.empty() ? 0 : n / cloud.size();
    std::vector<double> nm(n, 0.0), nv(n, 0.0);
    for (size_t i = 0; i < source.size(); ++i) {
      if (source[i] < 0) continue;
      const size_t s = size_t(source[i]);
      if ((s + 1) * stride > m[g].size()) throw InvalidArgument("adam remap: source out of range");
      for (size_t k = 0; k < stride; ++k) {
        nm[i * stride + k] = m[g][s * stride + k];
        nv[i * stride + k] = v[g][s * stride + k];
      }
    }
    m[g] = std::move(nm);
    v[g] = std::move(nv);
  }
}

void adam_step(GaussianCloud& cloud, const CloudGradients& grads, AdamState& state,
               const std::array<double, kParamGroupCount>& lrs, const AdamConfig& cfg) {
  for (int g = 0; g < kParamGroupCount; ++g) {
    const auto& p = group_array(cloud, g);
    const auto& d = group_array(grads, g);
    if (d.size() != p.size() || state.m[g].size() != p.size()) {
      throw InvalidArgument("adam_step: shape mismatch in group " +
                            std::string(to_string(ParamGroup(g))));
    }
    for (size_t i = 0; i < d.size(); ++i) {
      if (!std::isfinite(d[i])) {
        throw NumericalError("non-finite gradient in parameter group '" +
                             std::string(to_string(ParamGroup(g))) + "' (element " +
                             std::to_string(i) + ")");
      }
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (int g = 0; g < kParamGroupCount; ++g) {
    auto& p = group_array(cloud, g);
    const auto& d = group_array(grads, g);
    auto& m = state.m[g];
    auto& v = state.v[g];
    const double lr = lrs[g];
    for (size_t i = 0; i < p.size(); ++i) {
      const double gi = d[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p[i] = float(double(p[i]) - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
  cloud.normalize_rotations();
}

LuminanceSpace TrainConfig::resolved_luminance_space() const {
  if (luminance_space) return *luminance_space;
  return supervision == Supervision::HdrRgb ? LuminanceSpace::Log : LuminanceSpace::Linear;
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (sh_degree < 0 || sh_degree > kMaxShDegree) throw ConfigError("sh degree must be in [0, 5]");
  if (num_gaussians == 0) throw ConfigError("num_gaussians must be positive");
  for (double r : {lr.position, lr.position_final, lr.log_scale, lr.rotation, lr.opacity, lr.sh,
                   lr.luminance}) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("learning rates must be finite and >= 0");
  }
  if (!(lr.position > 0.0 && lr.position_final > 0.0)) {
    throw ConfigError("position learning rates must be positive (log-linear decay)");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 &&
        adam.eps > 0.0)) {
    throw ConfigError("adam betas must be in [0, 1) and eps positive");
  }
  loss.validate();
  if (init_luminance && !(*init_luminance > 0.0)) throw ConfigError("init_luminance must be positive");
  if (!(init_opacity > 0.0 && init_opacity < 1.0)) throw ConfigError("init_opacity must be in (0, 1)");
  if (sh_warmup_interval < 1) throw ConfigError("sh_warmup_interval must be positive");
  if (log_every < 1) throw ConfigError("log_every must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (threads < 1) throw ConfigError("threads must be positive");
  for (double b : background) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("background must be finite and >= 0");
  }
  if (adc.enabled && (adc.interval < 1 || adc.max_gaussians == 0)) {
    throw ConfigError("adc interval and max_gaussians must be positive");
  }
}

std::string TrainConfig::to_json() const {
  json j;
  j["iterations"] = iterations;
  j["lr"] = {{"position", lr.position},   {"position_final", lr.position_final},
             {"log_scale", lr.log_scale}, {"rotation", lr.rotation},
             {"opacity", lr.opacity},     {"sh", lr.sh},
             {"luminance", lr.luminance}};
  j["adam"] = {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}};
  j["luminance_space"] = std::string(to_string(resolved_luminance_space()));
  j["loss"] = {{"lambda", loss.lambda},
               {"mu", loss.mu},
               {"ssim_window", loss.ssim_window},
               {"ssim_sigma", loss.ssim_sigma},
               {"ssim_k1", loss.ssim_k1},
               {"ssim_k2", loss.ssim_k2},
               {"ssim_dynamic_range", loss.ssim_dynamic_range}};
  j["adc"] = {{"enabled", adc.enabled},
              {"grad_threshold", adc.grad_threshold},
              {"min_opacity", adc.min_opacity},
              {"interval", adc.interval},
              {"start_iter", adc.start_iter},
              {"stop_fraction", adc.stop_fraction},
              {"max_gaussians", adc.max_gaussians},
              {"percent_dense", adc.percent_dense},
              {"split_scale_divisor", adc.split_scale_divisor}};
  j["seed"] = seed;
  j["supervision"] = std::string(to_string(supervision));
  j["color_model"] = std::string(to_string(color_model));
  j["sh_degree"] = sh_degree;
  j["num_gaussians"] = num_gaussians;
  if (init_luminance) j["init_luminance"] = *init_luminance;
  j["init_opacity"] = init_opacity;
  j["baseline_offset"] = baseline_offset;
  j["sh_warmup"] = sh_warmup;
  j["sh_warmup_interval"] = sh_warmup_interval;
  j["background"] = background;
  if (bayer_pattern) j["bayer_pattern"] = std::string(to_string(*bayer_pattern));
  j["log_every"] = log_every;
  j["checkpoint_every"] = checkpoint_every;
  j["threads"] = threads;
  return j.dump(2) + "\n";
}

namespace {

template <class T>
void take(const json& obj, const char* key, T& out, const std::string& ctx) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + key + " has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known,
                    const std::string& ctx) {
  if (!obj.is_object()) throw ConfigError(ctx + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown config key '" + ctx + it.key() + "'");
    }
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(std::string_view text, const TrainConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"iterations", "lr", "adam", "luminance_space", "loss", "adc", "seed",
                  "supervision", "color_model", "sh_degree", "num_gaussians", "init_luminance",
                  "init_opacity", "baseline_offset", "sh_warmup", "sh_warmup_interval",
                  "background", "bayer_pattern", "log_every", "checkpoint_every", "threads"},
                 "");
  TrainConfig c = base;
  take(j, "iterations", c.iterations, "");
  if (j.contains("lr")) {
    const json& l = j["lr"];
    reject_unknown(l, {"position", "position_final", "log_scale", "rotation", "opacity", "sh",
                       "luminance"}, "lr.");
    take(l, "position", c.lr.position, "lr.");
    take(l, "position_final", c.lr.position_final, "lr.");
    take(l, "log_scale", c.lr.log_scale, "lr.");
    take(l, "rotation", c.lr.rotation, "lr.");
    take(l, "opacity", c.lr.opacity, "lr.");
    take(l, "sh", c.lr.sh, "lr.");
    take(l, "luminance", c.lr.luminance, "lr.");
  }
  if (j.contains("adam")) {
    const json& a = j["adam"];
    reject_unknown(a, {"beta1", "beta2", "eps"}, "adam.");
    take(a, "beta1", c.adam.beta1, "adam.");
    take(a, "beta2", c.adam.beta2, "adam.");
    take(a, "eps", c.adam.eps, "adam.");
  }
  if (j.contains("luminance_space")) {
    std::string s;
    take(j, "luminance_space", s, "");
    c.luminance_space = parse_luminance_space(s);
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    reject_unknown(l, {"lambda", "mu", "ssim_window", "ssim_sigma", "ssim_k1", "ssim_k2",
                       "ssim_dynamic_range"}, "loss.");
    take(l, "lambda", c.loss.lambda, "loss.");
    take(l, "mu", c.loss.mu, "loss.");
    take(l, "ssim_window", c.loss.ssim_window, "loss.");
    take(l, "ssim_sigma", c.loss.ssim_sigma, "loss.");
    take(l, "ssim_k1", c.loss.ssim_k1, "loss.");
    take(l, "ssim_k2", c.loss.ssim_k2, "loss.");
    take(l, "ssim_dynamic_range", c.loss.ssim_dynamic_range, "loss.");
  }
  if (j.contains("adc")) {
    const json& a = j["adc"];
    reject_unknown(a, {"enabled", "grad_threshold", "min_opacity", "interval", "start_iter",
                       "stop_fraction", "max_gaussians", "percent_dense", "split_scale_divisor"},
                   "adc.");
    take(a, "enabled", c.adc.enabled, "adc.");
    take(a, "grad_threshold", c.adc.grad_threshold, "adc.");
    take(a, "min_opacity", c.adc.min_opacity, "adc.");
    take(a, "interval", c.adc.interval, "adc.");
    take(a, "start_iter", c.adc.start_iter, "adc.");
    take(a, "stop_fraction", c.adc.stop_fraction, "adc.");
    take(a, "max_gaussians", c.adc.max_gaussians, "adc.");
    take(a, "percent_dense", c.adc.percent_dense, "adc.");
    take(a, "split_scale_divisor", c.adc.split_scale_divisor, "adc.");
  }
  take(j, "seed", c.seed, "");
  if (j.contains("supervision")) {
    std::string s;
    take(j, "supervision", s, "");
    c.supervision = parse_supervision(s);
  }
  if (j.contains("color_model")) {
    std::string s;
    take(j, "color_model", s, "");
    c.color_model = parse_color_model(s);
  }
  take(j, "sh_degree", c.sh_degree, "");
  take(j, "num_gaussians", c.num_gaussians, "");
  if (j.contains("init_luminance")) {
    double v = 0.0;
    take(j, "init_luminance", v, "");
    c.init_luminance = v;
  }
  take(j, "init_opacity", c.init_opacity, "");
  take(j, "baseline_offset", c.baseline_offset, "");
  take(j, "sh_warmup", c.sh_warmup, "");
  take(j, "sh_warmup_interval", c.sh_warmup_interval, "");
  take(j, "background", c.background, "");
  if (j.contains("bayer_pattern")) {
    std::string s;
    take(j, "bayer_pattern", s, "");
    try {
      c.bayer_pattern = parse_bayer_pattern(s);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }
  take(j, "log_every", c.log_every, "");
  take(j, "checkpoint_every", c.checkpoint_every, "");
  take(j, "threads", c.threads, "");
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(std::string_view text) { return from_json(text, TrainConfig{}); }

}  // namespace nhsplat
