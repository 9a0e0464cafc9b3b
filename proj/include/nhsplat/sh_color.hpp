#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "nhsplat/types.hpp"

namespace nhsplat {

inline constexpr int kMaxShDegree = 5;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }
/// Y_0^0 = 1 / (2 sqrt(pi)).
inline constexpr double kShC0 = 0.28209479177387814;

using Rgb = std::array<double, 3>;

/// Unit view direction. Construction validates the norm.
class ViewDirection {
 public:
  enum class Policy { Reject, Normalize };

  /// Throws InvalidArgument when |v| differs from 1 by more than 1e-9 and
  /// policy is Reject, or when v is zero / non-finite.
  explicit ViewDirection(const Eigen::Vector3d& v, Policy policy = Policy::Reject);
  static ViewDirection from_angles(double theta, double phi);

  const Eigen::Vector3d& vec() const { return d_; }

 private:
  Eigen::Vector3d d_;
};

/// (L+1)^2 coefficient triples in flat band order, channel-minor:
/// values[3 * k + c] is channel c of basis function k.
struct ShCoeffs {
  int degree = 0;
  std::vector<double> values;

  ShCoeffs() : values(3, 0.0) {}
  explicit ShCoeffs(int degree);
  ShCoeffs(int degree, std::vector<double> values);

  int count() const { return sh_coeff_count(degree); }
  double& at(int k, int c) { return values[3 * k + c]; }
  double at(int k, int c) const { return values[3 * k + c]; }
  void validate() const;
};

/// Stored luminance parameter and the space it is optimized in.
struct LuminanceParam {
  static constexpr double kLinearFloor = 1e-8;

  double raw = 0.0;
  LuminanceSpace space = LuminanceSpace::Log;

  double effective() const;
  /// d(effective)/d(raw); zero below the floor in linear space.
  double derivative() const;
  static LuminanceParam from_effective(double lum, LuminanceSpace space);
};

/// Real SH basis in flat (l, m) band order, no Condon-Shortley phase.
/// Y_1^{-1} ~ y, Y_1^0 ~ z, Y_1^1 ~ x.
std::vector<double> eval_sh_basis(const ViewDirection& d, int degree);

// Unchecked kernels. `d` must be unit length and out.size() >= (degree+1)^2.
void sh_basis(const Eigen::Vector3d& d, int degree, std::span<double> out);
/// Basis values plus the gradient of each polynomial basis function w.r.t.
/// the (unconstrained) direction components.
void sh_basis_with_gradient(const Eigen::Vector3d& d, int degree, std::span<double> out,
                            std::span<Eigen::Vector3d> grad);

/// Everything needed to evaluate one Gaussian's color.
struct ColorParams {
  ColorModel model = ColorModel::Entangled;
  int degree = 0;
  std::span<const double> coeffs;  // 3 * (degree+1)^2
  LuminanceParam luminance;        // decomposed only
  bool baseline_offset = false;    // entangled only: +0.5 then clamp at 0
};

Rgb evaluate_color(const ColorParams& p, const Eigen::Vector3d& dir);

/// Accumulates dL/dcoeffs into coeff_grad and returns dL/draw_lum and
/// dL/ddir (unconstrained direction components).
struct ColorBackward {
  double luminance_raw = 0.0;
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
};
ColorBackward evaluate_color_backward(const ColorParams& p, const Eigen::Vector3d& dir,
                                      const Rgb& upstream, std::span<double> coeff_grad);

Rgb color_entangled(const ViewDirection& d, const ShCoeffs& k, bool baseline_offset = false);
Rgb color_decomposed(const ViewDirection& d, const LuminanceParam& lum, const ShCoeffs& b);

struct ColorGradients {
  std::vector<double> coeffs;
  double luminance_raw = 0.0;
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
};
ColorGradients color_gradients_entangled(const ViewDirection& d, const ShCoeffs& k,
                                         bool baseline_offset, const Rgb& upstream);
ColorGradients color_gradients_decomposed(const ViewDirection& d, const LuminanceParam& lum,
                                          const ShCoeffs& b, const Rgb& upstream);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace nhsplat
