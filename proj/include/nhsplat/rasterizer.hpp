#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "nhsplat/camera.hpp"
#include "nhsplat/image.hpp"
#include "nhsplat/scene.hpp"

namespace nhsplat {

/// Image-formation settings shared by the tiled renderer and the reference.
struct RenderSettings {
  Rgb background{0.0, 0.0, 0.0};
  int tile_size = 16;
  /// A Gaussian touches a pixel only inside this many standard deviations
  /// (Mahalanobis radius). <= 0 makes footprints unbounded.
  double cutoff_sigma = 3.0;
  /// Compositing stops after the contributor that drops transmittance below
  /// this value. 0 composites every contributor.
  double min_transmittance = 1e-4;
  double lowpass = 0.3;
  bool baseline_offset = true;
  int active_sh_degree = -1;  // -1: the cloud's full degree
  int threads = 1;

  /// Untruncated compositing: smooth in every parameter.
  static RenderSettings exact() {
    RenderSettings s;
    s.cutoff_sigma = 0.0;
    s.min_transmittance = 0.0;
    return s;
  }
};

/// Screen-space footprint of one Gaussian.
template <class T>
struct Splat2D {
  Eigen::Matrix<T, 2, 1> mean;
  std::array<T, 3> cov;    // xx, xy, yy (after low-pass)
  std::array<T, 3> conic;  // inverse covariance: xx, xy, yy
  T depth{};
  std::array<T, 3> rgb{};
  T alpha{};
  std::array<int, 4> rect{};  // x0, y0, x1, y1 inclusive pixel range
};

template <class T>
struct BasicRenderOutput {
  BasicImage<T> image;          // 3 channels
  BasicImage<T> transmittance;  // final T per pixel
  BasicImage<T> weight_sum;     // sum of compositing weights per pixel
  std::vector<int> contributors;
};

using RenderOutput = BasicRenderOutput<float>;
using RenderOutputD = BasicRenderOutput<double>;

/// Gradients laid out exactly like the cloud's parameter arrays.
template <class T>
struct BasicCloudGradients {
  std::vector<T> positions;
  std::vector<T> log_scales;
  std::vector<T> rotations;
  std::vector<T> opacity_logits;
  std::vector<T> luminance;
  std::vector<T> sh;
  /// |dL/dmean2d| in normalized device units, for density control.
  std::vector<double> mean2d_norm;
  std::vector<uint8_t> visible;

  void resize_for(const BasicGaussianCloud<T>& cloud);
};

using CloudGradients = BasicCloudGradients<float>;
using CloudGradientsD = BasicCloudGradients<double>;

/// Projects Gaussian i. Returns nullopt when it lies at or before the near
/// plane or its footprint misses the image. Throws InvalidArgument naming the
/// index when any parameter is non-finite.
template <class T>
std::optional<Splat2D<T>> project_gaussian(const BasicGaussianCloud<T>& cloud, size_t i,
                                           const Camera& cam, const RenderSettings& s);

/// Tiled front-to-back compositing. Deterministic; output does not depend on
/// the thread count.
template <class T>
BasicRenderOutput<T> render(const BasicGaussianCloud<T>& cloud, const Camera& cam,
                            const RenderSettings& s);

/// Gradients of sum(upstream * image) w.r.t. every cloud parameter.
/// Per-tile partial sums are merged in tile order, so results are bitwise
/// reproducible for any thread count.
template <class T>
BasicCloudGradients<T> render_backward(const BasicGaussianCloud<T>& cloud, const Camera& cam,
                                       const RenderSettings& s, const BasicImage<T>& upstream);

/// Brute-force fp64 renderer: per-pixel global depth sort, no tiles. Shares
/// the footprint cutoff and transmittance stopping rule with render().
RenderOutputD render_reference(const GaussianCloudD& cloud, const Camera& cam,
                               const RenderSettings& s);
RenderOutputD render_reference(const GaussianCloud& cloud, const Camera& cam,
                               const RenderSettings& s);

}  // namespace nhsplat
