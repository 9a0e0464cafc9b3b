#include "nhsplat/camera.hpp"

#include <Eigen/Geometry>
#include <cstdlib>
#include <string>

#include "nhsplat/error.hpp"
#include "nhsplat/parallel.hpp"

namespace nhsplat {

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
  if (width < 1 || height < 1) throw InvalidArgument("camera resolution must be at least 1x1");
  if (!(near > 0.0)) throw InvalidArgument("camera near plane must be positive");
  const double err = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-6)) throw InvalidArgument("camera rotation is not orthonormal");
  if (!translation.allFinite()) throw InvalidArgument("camera translation is not finite");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double fx, double fy, int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = down;
  cam.rotation.row(2) = forward;
  cam.translation = -cam.rotation * eye;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  return cam;
}

int threads_from_env(int fallback) {
  if (const char* s = std::getenv("NHSPLAT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end != s && *end == '\0' && v >= 1 && v <= 1024) return int(v);
  }
  return fallback;
}

}  // namespace nhsplat
