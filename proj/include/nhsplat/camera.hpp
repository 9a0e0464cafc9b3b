#pragma once

#include <Eigen/Core>

namespace nhsplat {

/// Pinhole camera, OpenCV axes (x right, y down, z forward). Pixel (x, y)
/// covers [x, x+1) x [y, y+1); its center is at (x + 0.5, y + 0.5).
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double near = 0.01;

  /// Throws InvalidArgument on non-positive focal lengths or sizes, or a
  /// rotation that is not orthonormal within 1e-6.
  void validate() const;
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, double fx, double fy, int width, int height);

  bool operator==(const Camera&) const = default;
};

}  // namespace nhsplat
