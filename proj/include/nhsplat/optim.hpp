#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nhsplat/data_io.hpp"
#include "nhsplat/photometry.hpp"
#include "nhsplat/rasterizer.hpp"
#include "nhsplat/scene.hpp"

namespace nhsplat {

enum class ParamGroup { Position, LogScale, Rotation, Opacity, Sh, Luminance };
inline constexpr int kParamGroupCount = 6;
std::string_view to_string(ParamGroup g);

struct LearningRates {
  double position = 1.6e-4;
  double position_final = 1.6e-6;
  double log_scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double sh = 2.5e-3;
  double luminance = 5e-2;

  /// Log-linear interpolation from `position` to `position_final`.
  double position_at(int iter, int total) const;
  /// Per-group rates for one step.
  std::array<double, kParamGroupCount> at(int iter, int total) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

struct AdamState {
  int64_t t = 0;
  std::array<std::vector<double>, kParamGroupCount> m;
  std::array<std::vector<double>, kParamGroupCount> v;

  /// Zero moments shaped like the cloud's parameter arrays.
  void reset_for(const GaussianCloud& cloud);
  /// Follows a densify step: entry i copies the moments of Gaussian
  /// source[i], or zeros when source[i] < 0.
  void remap(const GaussianCloud& cloud, const std::vector<long>& source);
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update per parameter group, then quaternion
/// renormalization. Throws NumericalError naming the group on a non-finite
/// gradient; parameters are left untouched in that case.
void adam_step(GaussianCloud& cloud, const CloudGradients& grads, AdamState& state,
               const std::array<double, kParamGroupCount>& lrs, const AdamConfig& cfg = {});

struct TrainConfig {
  int iterations = 7000;
  LearningRates lr;
  AdamConfig adam;
  /// Unset: Log for HdrRgb data, Linear for BayerRaw.
  std::optional<LuminanceSpace> luminance_space;
  LossConfig loss;
  AdcConfig adc;
  uint64_t seed = 0;
  Supervision supervision = Supervision::HdrRgb;
  ColorModel color_model = ColorModel::Decomposed;
  int sh_degree = 3;
  size_t num_gaussians = 512;
  /// Effective Lum of fresh decomposed Gaussians. Unset: twice the mean
  /// training-image luminance, so the initial color matches the mean.
  std::optional<double> init_luminance;
  double init_opacity = 0.1;
  bool baseline_offset = true;
  /// Grow the active SH degree by one every `sh_warmup_interval` iterations.
  bool sh_warmup = false;
  int sh_warmup_interval = 1000;
  Rgb background{0.0, 0.0, 0.0};
  std::optional<BayerPattern> bayer_pattern;
  int log_every = 10;
  int checkpoint_every = 0;
  int threads = 1;

  LuminanceSpace resolved_luminance_space() const;
  void validate() const;
  std::string to_json() const;
  /// Overlays the fields present in `text` onto `base`. Unknown keys are errors.
  static TrainConfig from_json(std::string_view text, const TrainConfig& base);
  static TrainConfig from_json(std::string_view text);
};

struct MetricsRecord {
  int iter = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double ssim_loss = 0.0;
  double mu_psnr = 0.0;
  size_t n_gaussians = 0;
  double wall_ms = 0.0;

  /// One NDJSON line without the trailing newline.
  std::string to_json(bool with_wall_time = true) const;
};

struct TrainCallbacks {
  std::function<void(const MetricsRecord&)> on_log;
  std::function<void(int iter, const GaussianCloud&)> on_checkpoint;
};

struct TrainResult {
  GaussianCloud cloud;
  std::vector<MetricsRecord> log;
  std::vector<double> losses;  // every iteration
  double seconds = 0.0;
};

/// Mean over every training pixel and channel (mosaic values for BayerRaw).
double mean_luminance(const Dataset& data);
GaussianCloud initial_cloud(const Dataset& data, const TrainConfig& cfg);
RenderSettings render_settings(const TrainConfig& cfg);

/// Throws NumericalError with the iteration and view on a non-finite loss or
/// gradient, ConfigError when the dataset and config disagree.
TrainResult train(const Dataset& data, const TrainConfig& cfg, const TrainCallbacks& cb = {});
TrainResult train(const Dataset& data, const TrainConfig& cfg, GaussianCloud init,
                  const TrainCallbacks& cb = {});

struct ViewMetrics {
  std::string name;
  double mu_psnr = 0.0;
  double psnr = 0.0;  // linear radiance, peak = max(gt)
  double ssim = 0.0;  // on mu-law compressed images
  std::optional<double> raw_psnr;  // mu-law PSNR on the mosaic (BayerRaw)
};

struct EvalResult {
  std::string split;
  std::vector<ViewMetrics> views;
  ViewMetrics mean;

  std::string to_json() const;
  std::string table() const;
};

/// Views are rendered in parallel; results do not depend on the thread count.
EvalResult evaluate(const GaussianCloud& cloud, const Dataset& data, std::string_view split,
                    const RenderSettings& settings, double mu = 5000.0);

/// Median of values[begin, end).
double median(std::vector<double> values);

}  // namespace nhsplat
