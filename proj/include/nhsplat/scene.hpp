#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "nhsplat/sh_color.hpp"
#include "nhsplat/types.hpp"

namespace nhsplat {

/// One Gaussian primitive as a standalone value.
struct Gaussian {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};  // (w, x, y, z)
  double opacity_logit = 0.0;
  double luminance_raw = 0.0;     // decomposed clouds only
  std::vector<double> sh;         // 3 * (degree+1)^2, channel-minor
};

/// Structure-of-arrays parameter storage. Every Gaussian shares one color
/// model, SH degree and luminance space.
template <class T>
struct BasicGaussianCloud {
  ColorModel color_model = ColorModel::Decomposed;
  int sh_degree = 3;
  LuminanceSpace luminance_space = LuminanceSpace::Log;
  Box bounds;

  std::vector<T> positions;       // 3 per Gaussian
  std::vector<T> log_scales;      // 3
  std::vector<T> rotations;       // 4, (w, x, y, z)
  std::vector<T> opacity_logits;  // 1
  std::vector<T> luminance;       // 1, empty for entangled clouds
  std::vector<T> sh;              // sh_stride()

  BasicGaussianCloud() = default;
  BasicGaussianCloud(ColorModel model, int degree, LuminanceSpace space, Box box);

  size_t size() const { return opacity_logits.size(); }
  bool empty() const { return opacity_logits.empty(); }
  int sh_stride() const { return 3 * sh_coeff_count(sh_degree); }
  bool decomposed() const { return color_model == ColorModel::Decomposed; }

  void push_back(const Gaussian& g);
  Gaussian gaussian(size_t i) const;
  void reserve(size_t n);
  /// Keeps Gaussians whose index appears in `order` (may repeat), in that order.
  void gather(std::span<const size_t> order);
  void normalize_rotations();

  Eigen::Vector3d position(size_t i) const {
    return {double(positions[3 * i]), double(positions[3 * i + 1]), double(positions[3 * i + 2])};
  }
  double opacity(size_t i) const { return sigmoid(double(opacity_logits[i])); }
  /// R diag(exp(log_scale))^2 R^T.
  Eigen::Matrix3d covariance(size_t i) const;
  ColorParams color_params(size_t i, std::vector<double>& scratch, bool baseline_offset) const;

  template <class U>
  BasicGaussianCloud<U> cast() const {
    BasicGaussianCloud<U> o(color_model, sh_degree, luminance_space, bounds);
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    o.positions = conv(positions);
    o.log_scales = conv(log_scales);
    o.rotations = conv(rotations);
    o.opacity_logits = conv(opacity_logits);
    o.luminance = conv(luminance);
    o.sh = conv(sh);
    return o;
  }

  bool operator==(const BasicGaussianCloud&) const = default;
};

using GaussianCloud = BasicGaussianCloud<float>;
using GaussianCloudD = BasicGaussianCloud<double>;

Eigen::Matrix3d rotation_matrix(const Eigen::Vector4d& q);

struct InitOptions {
  size_t count = 1000;
  Box bounds;
  uint64_t seed = 0;
  ColorModel color_model = ColorModel::Decomposed;
  int sh_degree = 3;
  LuminanceSpace luminance_space = LuminanceSpace::Log;
  double init_luminance = 1.0;  // effective Lum for decomposed clouds
  bool baseline_offset = true;  // entangled DC is chosen so the color starts at 0.5 gray
  double init_opacity = 0.1;
  /// Optional seed positions; Gaussian i starts at points[i % size] (jittered on reuse).
  std::vector<Eigen::Vector3d> points;
};

GaussianCloud init_cloud(const InitOptions& opts);

/// Adaptive density control settings.
struct AdcConfig {
  bool enabled = false;
  double grad_threshold = 2e-4;
  double min_opacity = 0.005;
  int interval = 100;
  int start_iter = 500;
  double stop_fraction = 0.6;
  size_t max_gaussians = 200000;
  double percent_dense = 0.01;  // clone/split boundary as a fraction of the scene extent
  double split_scale_divisor = 1.6;
};

/// Running per-Gaussian screen-space gradient statistics.
struct DensityStats {
  std::vector<double> grad_sum;
  std::vector<int> visible;

  void reset(size_t n) {
    grad_sum.assign(n, 0.0);
    visible.assign(n, 0);
  }
  void add(std::span<const double> grad_norms, std::span<const uint8_t> was_visible);
  double mean(size_t i) const { return visible[i] > 0 ? grad_sum[i] / visible[i] : 0.0; }
};

/// Result mapping: for each Gaussian of the updated cloud, the index it was
/// copied from in the old cloud, or -1 for freshly created ones.
struct DensifyResult {
  std::vector<long> source;
  size_t cloned = 0;
  size_t split = 0;
  size_t pruned = 0;
};

DensifyResult densify_and_prune(GaussianCloud& cloud, const DensityStats& stats,
                                const AdcConfig& cfg, std::mt19937_64& rng);

inline constexpr uint32_t kCloudFormatVersion = 1;

void save_cloud(const GaussianCloud& cloud, const std::filesystem::path& path);
/// Throws FormatError on bad magic, version, truncation, invariant violations,
/// or when `expected_model` is given and does not match.
GaussianCloud load_cloud(const std::filesystem::path& path,
                         std::optional<ColorModel> expected_model = std::nullopt);

}  // namespace nhsplat
