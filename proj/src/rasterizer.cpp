#include "nhsplat/rasterizer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nhsplat/error.hpp"
#include "nhsplat/parallel.hpp"

namespace nhsplat {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int active_degree(int cloud_degree, const RenderSettings& s) {
  return s.active_sh_degree < 0 ? cloud_degree : std::min(s.active_sh_degree, cloud_degree);
}

template <class T>
ColorParams color_params_for(const BasicGaussianCloud<T>& cloud, size_t i,
                             std::vector<double>& scratch, const RenderSettings& s) {
  ColorParams p = cloud.color_params(i, scratch, s.baseline_offset);
  p.degree = active_degree(cloud.sh_degree, s);
  p.coeffs = p.coeffs.first(3 * sh_coeff_count(p.degree));
  return p;
}

template <class T>
void check_finite(const BasicGaussianCloud<T>& cloud, size_t i) {
  auto ok = [](const std::vector<T>& v, size_t begin, size_t n) {
    for (size_t k = begin; k < begin + n; ++k) {
      if (!std::isfinite(double(v[k]))) return false;
    }
    return true;
  };
  const size_t stride = cloud.sh_stride();
  const bool fine = ok(cloud.positions, 3 * i, 3) && ok(cloud.log_scales, 3 * i, 3) &&
                    ok(cloud.rotations, 4 * i, 4) && ok(cloud.opacity_logits, i, 1) &&
                    (!cloud.decomposed() || ok(cloud.luminance, i, 1)) &&
                    ok(cloud.sh, i * stride, stride);
  if (!fine) {
    throw InvalidArgument("gaussian " + std::to_string(i) + " has non-finite parameters");
  }
}

// Double-precision projection state, shared by forward binning and the
// per-Gaussian backward chain.
struct Projection {
  Eigen::Vector3d p;
  Eigen::Vector3d pc;
  Eigen::Vector4d q;  // normalized
  double q_norm = 1.0;
  Eigen::Matrix3d r;
  Eigen::Vector3d s;
  Eigen::Matrix<double, 2, 3> j;
  Eigen::Matrix3d m;  // W Sigma W^T
  double cov[3];
  double conic[3];
  double det = 0.0;
  Eigen::Vector2d mean;
  Eigen::Vector3d dir;
  double dist = 0.0;
  Rgb rgb{};
  double alpha = 0.0;
  std::array<int, 4> rect{};
};

// Returns false when culled.
template <class T>
bool project(const BasicGaussianCloud<T>& cloud, size_t i, const Camera& cam,
             const RenderSettings& s, Projection& pr, std::vector<double>& scratch) {
  check_finite(cloud, i);
  pr.p = cloud.position(i);
  pr.pc = cam.to_camera(pr.p);
  if (pr.pc.z() <= cam.near) return false;

  const Eigen::Vector4d q_raw(cloud.rotations[4 * i], cloud.rotations[4 * i + 1],
                              cloud.rotations[4 * i + 2], cloud.rotations[4 * i + 3]);
  pr.q_norm = q_raw.norm();
  if (!(pr.q_norm > 0.0)) {
    throw InvalidArgument("gaussian " + std::to_string(i) + " has a zero rotation quaternion");
  }
  pr.q = q_raw / pr.q_norm;
  pr.r = rotation_matrix(pr.q);
  for (int k = 0; k < 3; ++k) pr.s[k] = std::exp(double(cloud.log_scales[3 * i + k]));
  const Eigen::Matrix3d a = pr.r * pr.s.asDiagonal();
  const Eigen::Matrix3d sigma = a * a.transpose();
  pr.m = cam.rotation * sigma * cam.rotation.transpose();

  const double x = pr.pc.x(), y = pr.pc.y(), z = pr.pc.z();
  pr.j << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
  const Eigen::Matrix2d cov = pr.j * pr.m * pr.j.transpose();
  pr.cov[0] = cov(0, 0) + s.lowpass;
  pr.cov[1] = 0.5 * (cov(0, 1) + cov(1, 0));
  pr.cov[2] = cov(1, 1) + s.lowpass;
  pr.det = pr.cov[0] * pr.cov[2] - pr.cov[1] * pr.cov[1];
  if (!(pr.det > 0.0)) return false;
  pr.conic[0] = pr.cov[2] / pr.det;
  pr.conic[1] = -pr.cov[1] / pr.det;
  pr.conic[2] = pr.cov[0] / pr.det;
  pr.mean = {cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy};

  if (s.cutoff_sigma > 0.0) {
    const double hx = s.cutoff_sigma * std::sqrt(pr.cov[0]);
    const double hy = s.cutoff_sigma * std::sqrt(pr.cov[2]);
    auto clampd = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };
    const double x0 = std::ceil(clampd(pr.mean.x() - hx - 0.5, -1.0, cam.width));
    const double x1 = std::floor(clampd(pr.mean.x() + hx - 0.5, -1.0, cam.width));
    const double y0 = std::ceil(clampd(pr.mean.y() - hy - 0.5, -1.0, cam.height));
    const double y1 = std::floor(clampd(pr.mean.y() + hy - 0.5, -1.0, cam.height));
    pr.rect = {std::max(int(x0), 0), std::max(int(y0), 0), std::min(int(x1), cam.width - 1),
               std::min(int(y1), cam.height - 1)};
    if (pr.rect[0] > pr.rect[2] || pr.rect[1] > pr.rect[3]) return false;
  } else {
    pr.rect = {0, 0, cam.width - 1, cam.height - 1};
  }

  const Eigen::Vector3d offset = pr.p - cam.center();
  pr.dist = offset.norm();
  pr.dir = pr.dist > 0.0 ? Eigen::Vector3d(offset / pr.dist) : Eigen::Vector3d::UnitZ();
  pr.rgb = evaluate_color(color_params_for(cloud, i, scratch, s), pr.dir);
  pr.alpha = cloud.opacity(i);
  return true;
}

template <class T>
Splat2D<T> to_splat(const Projection& pr) {
  Splat2D<T> sp;
  sp.mean = {T(pr.mean.x()), T(pr.mean.y())};
  for (int k = 0; k < 3; ++k) {
    sp.cov[k] = T(pr.cov[k]);
    sp.conic[k] = T(pr.conic[k]);
    sp.rgb[k] = T(pr.rgb[k]);
  }
  sp.depth = T(pr.pc.z());
  sp.alpha = T(pr.alpha);
  sp.rect = pr.rect;
  return sp;
}

// Footprint geometry kept in double for every T. The cutoff is a hard edge, so
// the inside/outside test must not depend on the storage precision.
struct SplatGeom {
  double mx, my, ca, cb, cc;
};

template <class T>
struct Binned {
  std::vector<Splat2D<T>> splats;
  std::vector<SplatGeom> geom;
  std::vector<uint8_t> valid;
  std::vector<std::vector<uint32_t>> tiles;
  int tiles_x = 0;
  int tiles_y = 0;
};

template <class T>
Binned<T> bin_splats(const BasicGaussianCloud<T>& cloud, const Camera& cam,
                     const RenderSettings& s) {
  cam.validate();
  if (s.tile_size < 1) throw InvalidArgument("tile size must be positive");
  Binned<T> b;
  const size_t n = cloud.size();
  b.splats.resize(n);
  b.geom.resize(n);
  b.valid.assign(n, 0);
  parallel_for(n, s.threads, [&](size_t begin, size_t end) {
    Projection pr;
    std::vector<double> scratch;
    for (size_t i = begin; i < end; ++i) {
      if (project(cloud, i, cam, s, pr, scratch)) {
        b.splats[i] = to_splat<T>(pr);
        b.geom[i] = {pr.mean.x(), pr.mean.y(), pr.conic[0], pr.conic[1], pr.conic[2]};
        b.valid[i] = 1;
      }
    }
  });

  b.tiles_x = (cam.width + s.tile_size - 1) / s.tile_size;
  b.tiles_y = (cam.height + s.tile_size - 1) / s.tile_size;
  b.tiles.assign(size_t(b.tiles_x) * b.tiles_y, {});
  for (size_t i = 0; i < n; ++i) {
    if (!b.valid[i]) continue;
    const auto& r = b.splats[i].rect;
    for (int ty = r[1] / s.tile_size; ty <= r[3] / s.tile_size; ++ty) {
      for (int tx = r[0] / s.tile_size; tx <= r[2] / s.tile_size; ++tx) {
        b.tiles[size_t(ty) * b.tiles_x + tx].push_back(uint32_t(i));
      }
    }
  }
  parallel_for(b.tiles.size(), s.threads, [&](size_t begin, size_t end) {
    for (size_t t = begin; t < end; ++t) {
      std::sort(b.tiles[t].begin(), b.tiles[t].end(), [&](uint32_t a, uint32_t c) {
        const T da = b.splats[a].depth, dc = b.splats[c].depth;
        return da < dc || (da == dc && a < c);
      });
    }
  });
  return b;
}

// Tile-local structure-of-arrays copy of the depth-sorted splats.
template <class T>
struct TileSplats {
  std::vector<double> mx, my, ca, cb, cc;
  std::vector<T> alpha, r, g, b;

  void load(const Binned<T>& bin, const std::vector<uint32_t>& list) {
    const size_t n = list.size();
    for (auto* v : {&mx, &my, &ca, &cb, &cc}) v->resize(n);
    for (auto* v : {&alpha, &r, &g, &b}) v->resize(n);
    for (size_t k = 0; k < n; ++k) {
      const auto& sp = bin.splats[list[k]];
      const auto& ge = bin.geom[list[k]];
      mx[k] = ge.mx;
      my[k] = ge.my;
      ca[k] = ge.ca;
      cb[k] = ge.cb;
      cc[k] = ge.cc;
      alpha[k] = sp.alpha;
      r[k] = sp.rgb[0];
      g[k] = sp.rgb[1];
      b[k] = sp.rgb[2];
    }
  }
};

template <class T>
struct Contribution {
  uint32_t k;  // index into the tile list
  T gauss;
  T a;
  T trans;  // transmittance before this contributor
};

double cutoff_q(const RenderSettings& s) {
  return s.cutoff_sigma > 0.0 ? s.cutoff_sigma * s.cutoff_sigma
                              : std::numeric_limits<double>::infinity();
}

// Composites one pixel; calls on_contrib(k, G, a, T_before) for each contributor.
template <class T, class OnContrib>
T composite_pixel(const TileSplats<T>& ts, double px, double py, double cut2, T min_t, T rgb[3],
                  T& wsum, int& count, OnContrib&& on_contrib) {
  T trans = T(1);
  const size_t n = ts.mx.size();
  for (size_t k = 0; k < n; ++k) {
    const double dx = px - ts.mx[k];
    const double dy = py - ts.my[k];
    const double q = ts.ca[k] * dx * dx + 2.0 * ts.cb[k] * dx * dy + ts.cc[k] * dy * dy;
    if (q > cut2) continue;
    const T gauss = T(std::exp(-0.5 * q));
    const T a = ts.alpha[k] * gauss;
    const T w = a * trans;
    rgb[0] += w * ts.r[k];
    rgb[1] += w * ts.g[k];
    rgb[2] += w * ts.b[k];
    wsum += w;
    on_contrib(uint32_t(k), gauss, a, trans);
    trans *= T(1) - a;
    ++count;
    if (trans < min_t) break;
  }
  return trans;
}

}  // namespace

template <class T>
void BasicCloudGradients<T>::resize_for(const BasicGaussianCloud<T>& cloud) {
  const size_t n = cloud.size();
  positions.assign(3 * n, T(0));
  log_scales.assign(3 * n, T(0));
  rotations.assign(4 * n, T(0));
  opacity_logits.assign(n, T(0));
  luminance.assign(cloud.decomposed() ? n : 0, T(0));
  sh.assign(n * cloud.sh_stride(), T(0));
  mean2d_norm.assign(n, 0.0);
  visible.assign(n, 0);
}

template <class T>
std::optional<Splat2D<T>> project_gaussian(const BasicGaussianCloud<T>& cloud, size_t i,
                                           const Camera& cam, const RenderSettings& s) {
  Projection pr;
  std::vector<double> scratch;
  if (!project(cloud, i, cam, s, pr, scratch)) return std::nullopt;
  return to_splat<T>(pr);
}

template <class T>
BasicRenderOutput<T> render(const BasicGaussianCloud<T>& cloud, const Camera& cam,
                            const RenderSettings& s) {
  const Binned<T> bin = bin_splats(cloud, cam, s);
  BasicRenderOutput<T> out;
  out.image = BasicImage<T>(cam.width, cam.height, 3);
  out.transmittance = BasicImage<T>(cam.width, cam.height, 1);
  out.weight_sum = BasicImage<T>(cam.width, cam.height, 1);
  out.contributors.assign(size_t(cam.width) * cam.height, 0);

  const double cut2 = cutoff_q(s);
  const T min_t = T(s.min_transmittance);
  const T bg[3] = {T(s.background[0]), T(s.background[1]), T(s.background[2])};
  parallel_for(bin.tiles.size(), s.threads, [&](size_t begin, size_t end) {
    TileSplats<T> ts;
    for (size_t t = begin; t < end; ++t) {
      ts.load(bin, bin.tiles[t]);
      const int x0 = int(t % bin.tiles_x) * s.tile_size;
      const int y0 = int(t / bin.tiles_x) * s.tile_size;
      const int x1 = std::min(x0 + s.tile_size, cam.width);
      const int y1 = std::min(y0 + s.tile_size, cam.height);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          T rgb[3] = {T(0), T(0), T(0)};
          T wsum = T(0);
          int count = 0;
          const T trans = composite_pixel(ts, x + 0.5, y + 0.5, cut2, min_t, rgb, wsum, count,
                                          [](uint32_t, T, T, T) {});
          for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = rgb[c] + trans * bg[c];
          out.transmittance.at(y, x) = trans;
          out.weight_sum.at(y, x) = wsum;
          out.contributors[size_t(y) * cam.width + x] = count;
        }
      }
    }
  });
  return out;
}

template <class T>
BasicCloudGradients<T> render_backward(const BasicGaussianCloud<T>& cloud, const Camera& cam,
                                       const RenderSettings& s, const BasicImage<T>& upstream) {
  if (upstream.width != cam.width || upstream.height != cam.height || upstream.channels != 3) {
    throw InvalidArgument("upstream gradient image does not match the camera resolution");
  }
  const Binned<T> bin = bin_splats(cloud, cam, s);
  const double cut2 = cutoff_q(s);
  const T min_t = T(s.min_transmittance);

  // Per tile entry: rgb(3), alpha, conic(3), mean(2).
  constexpr int kEntry = 9;
  std::vector<std::vector<double>> entry_grads(bin.tiles.size());
  parallel_for(bin.tiles.size(), s.threads, [&](size_t begin, size_t end) {
    TileSplats<T> ts;
    std::vector<Contribution<T>> stack;
    for (size_t t = begin; t < end; ++t) {
      const auto& list = bin.tiles[t];
      auto& eg = entry_grads[t];
      eg.assign(list.size() * kEntry, 0.0);
      if (list.empty()) continue;
      ts.load(bin, list);
      const int x0 = int(t % bin.tiles_x) * s.tile_size;
      const int y0 = int(t / bin.tiles_x) * s.tile_size;
      const int x1 = std::min(x0 + s.tile_size, cam.width);
      const int y1 = std::min(y0 + s.tile_size, cam.height);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const double gc[3] = {double(upstream.at(y, x, 0)), double(upstream.at(y, x, 1)),
                                double(upstream.at(y, x, 2))};
          if (gc[0] == 0.0 && gc[1] == 0.0 && gc[2] == 0.0) continue;
          const double px = x + 0.5, py = y + 0.5;
          stack.clear();
          T rgb[3] = {T(0), T(0), T(0)};
          T wsum = T(0);
          int count = 0;
          composite_pixel(ts, px, py, cut2, min_t, rgb, wsum, count,
                          [&](uint32_t k, T gauss, T a, T trans) {
                            stack.push_back({k, gauss, a, trans});
                          });
          // Color seen behind the current contributor, built back to front.
          double behind[3] = {s.background[0], s.background[1], s.background[2]};
          for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
            const uint32_t k = it->k;
            const double a = it->a, trans = it->trans, gauss = it->gauss;
            const double col[3] = {double(ts.r[k]), double(ts.g[k]), double(ts.b[k])};
            double* e = &eg[size_t(k) * kEntry];
            const double w = a * trans;
            double dl_da = 0.0;
            for (int c = 0; c < 3; ++c) {
              e[c] += w * gc[c];
              dl_da += gc[c] * (col[c] - behind[c]);
              behind[c] = col[c] * a + (1.0 - a) * behind[c];
            }
            dl_da *= trans;
            e[3] += dl_da * gauss;
            const double dl_dq = -0.5 * gauss * dl_da * double(ts.alpha[k]);
            const double dx = px - ts.mx[k];
            const double dy = py - ts.my[k];
            const double ca = ts.ca[k], cb = ts.cb[k], cc = ts.cc[k];
            e[4] += dl_dq * dx * dx;
            e[5] += dl_dq * 2.0 * dx * dy;
            e[6] += dl_dq * dy * dy;
            e[7] += dl_dq * -2.0 * (ca * dx + cb * dy);
            e[8] += dl_dq * -2.0 * (cb * dx + cc * dy);
          }
        }
      }
    }
  });

  const size_t n = cloud.size();
  std::vector<double> g2d(n * kEntry, 0.0);
  for (size_t t = 0; t < bin.tiles.size(); ++t) {
    const auto& list = bin.tiles[t];
    const auto& eg = entry_grads[t];
    for (size_t k = 0; k < list.size(); ++k) {
      double* dst = &g2d[size_t(list[k]) * kEntry];
      for (int f = 0; f < kEntry; ++f) dst[f] += eg[k * kEntry + f];
    }
  }

  BasicCloudGradients<T> grads;
  grads.resize_for(cloud);
  const size_t stride = cloud.sh_stride();
  parallel_for(n, s.threads, [&](size_t begin, size_t end) {
    Projection pr;
    std::vector<double> scratch;
    std::vector<double> coeff_grad;
    for (size_t i = begin; i < end; ++i) {
      if (!bin.valid[i]) continue;
      project(cloud, i, cam, s, pr, scratch);
      grads.visible[i] = 1;
      const double* g = &g2d[i * kEntry];

      // color
      const ColorParams cp = color_params_for(cloud, i, scratch, s);
      coeff_grad.assign(stride, 0.0);
      const ColorBackward cb = evaluate_color_backward(cp, pr.dir, {g[0], g[1], g[2]}, coeff_grad);
      for (size_t k = 0; k < stride; ++k) grads.sh[i * stride + k] = T(coeff_grad[k]);
      if (cloud.decomposed()) grads.luminance[i] = T(cb.luminance_raw);

      // opacity
      grads.opacity_logits[i] = T(g[3] * pr.alpha * (1.0 - pr.alpha));

      // conic -> 2D covariance
      const double x = pr.cov[0], y = pr.cov[1], z = pr.cov[2];
      const double d2 = pr.det * pr.det;
      const double ga = g[4], gb = g[5], gcn = g[6];
      const double gx = (-ga * z * z + gb * y * z - gcn * y * y) / d2;
      const double gy = (2.0 * ga * y * z - gb * (x * z + y * y) + 2.0 * gcn * x * y) / d2;
      const double gz = (-ga * y * y + gb * x * y - gcn * x * x) / d2;
      Eigen::Matrix2d gcov;
      gcov << gx, 0.5 * gy, 0.5 * gy, gz;

      // 2D covariance -> camera-space covariance and projection Jacobian
      const Eigen::Matrix3d gm = pr.j.transpose() * gcov * pr.j;
      const Eigen::Matrix<double, 2, 3> gj = 2.0 * gcov * pr.j * pr.m;
      const Eigen::Matrix3d gsigma = cam.rotation.transpose() * gm * cam.rotation;

      // Sigma = A A^T, A = R diag(s)
      const Eigen::Matrix3d a = pr.r * pr.s.asDiagonal();
      const Eigen::Matrix3d ga_mat = 2.0 * gsigma * a;
      const Eigen::Matrix3d gr = ga_mat * pr.s.asDiagonal();
      for (int k = 0; k < 3; ++k) {
        const double gsk = pr.r.col(k).dot(ga_mat.col(k));
        grads.log_scales[3 * i + k] = T(gsk * pr.s[k]);
      }

      // rotation matrix -> normalized quaternion -> raw quaternion
      const double w = pr.q[0], qx = pr.q[1], qy = pr.q[2], qz = pr.q[3];
      Eigen::Vector4d gq;
      gq[0] = 2.0 * (-qz * gr(0, 1) + qy * gr(0, 2) + qz * gr(1, 0) - qx * gr(1, 2) -
                     qy * gr(2, 0) + qx * gr(2, 1));
      gq[1] = 2.0 * (qy * gr(0, 1) + qz * gr(0, 2) + qy * gr(1, 0) - 2.0 * qx * gr(1, 1) -
                     w * gr(1, 2) + qz * gr(2, 0) + w * gr(2, 1) - 2.0 * qx * gr(2, 2));
      gq[2] = 2.0 * (-2.0 * qy * gr(0, 0) + qx * gr(0, 1) + w * gr(0, 2) + qx * gr(1, 0) +
                     qz * gr(1, 2) - w * gr(2, 0) + qz * gr(2, 1) - 2.0 * qy * gr(2, 2));
      gq[3] = 2.0 * (-2.0 * qz * gr(0, 0) - w * gr(0, 1) + qx * gr(0, 2) + w * gr(1, 0) -
                     2.0 * qz * gr(1, 1) + qy * gr(1, 2) + qx * gr(2, 0) + qy * gr(2, 1));
      const Eigen::Vector4d gq_raw = (gq - pr.q * pr.q.dot(gq)) / pr.q_norm;
      for (int k = 0; k < 4; ++k) grads.rotations[4 * i + k] = T(gq_raw[k]);

      // mean2d and Jacobian -> camera-space position
      const double px = pr.pc.x(), py = pr.pc.y(), pz = pr.pc.z();
      const double gmx = g[7], gmy = g[8];
      const double z2 = pz * pz, z3 = z2 * pz;
      Eigen::Vector3d gpc;
      gpc.x() = gmx * cam.fx / pz - gj(0, 2) * cam.fx / z2;
      gpc.y() = gmy * cam.fy / pz - gj(1, 2) * cam.fy / z2;
      gpc.z() = -gmx * cam.fx * px / z2 - gmy * cam.fy * py / z2 - gj(0, 0) * cam.fx / z2 +
                gj(0, 2) * 2.0 * cam.fx * px / z3 - gj(1, 1) * cam.fy / z2 +
                gj(1, 2) * 2.0 * cam.fy * py / z3;
      Eigen::Vector3d gp = cam.rotation.transpose() * gpc;
      if (pr.dist > 0.0) {
        gp += (cb.direction - pr.dir * pr.dir.dot(cb.direction)) / pr.dist;
      }
      for (int k = 0; k < 3; ++k) grads.positions[3 * i + k] = T(gp[k]);

      grads.mean2d_norm[i] = std::hypot(gmx * 0.5 * cam.width, gmy * 0.5 * cam.height);
    }
  });
  return grads;
}

// ---------------------------------------------------------------------------
// Reference renderer

RenderOutputD render_reference(const GaussianCloudD& cloud, const Camera& cam,
                               const RenderSettings& s) {
  cam.validate();
  struct Ref {
    Eigen::Vector2d mean;
    Eigen::Matrix2d conic;
    double depth;
    Rgb rgb;
    double alpha;
  };
  std::vector<Ref> refs;
  std::vector<size_t> ids;
  std::vector<double> scratch;
  const Eigen::Vector3d center = cam.center();
  for (size_t i = 0; i < cloud.size(); ++i) {
    check_finite(cloud, i);
    const Eigen::Vector3d p = cloud.position(i);
    const Eigen::Vector3d pc = cam.rotation * p + cam.translation;
    if (pc.z() <= cam.near) continue;
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / pc.z(), 0.0, -cam.fx * pc.x() / (pc.z() * pc.z()), 0.0, cam.fy / pc.z(),
        -cam.fy * pc.y() / (pc.z() * pc.z());
    const Eigen::Matrix2d cov = j * cam.rotation * cloud.covariance(i) *
                                    cam.rotation.transpose() * j.transpose() +
                                s.lowpass * Eigen::Matrix2d::Identity();
    if (!(cov.determinant() > 0.0)) continue;
    Ref r;
    r.mean = {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
    r.conic = cov.inverse();
    r.depth = pc.z();
    ColorParams cp = cloud.color_params(i, scratch, s.baseline_offset);
    cp.degree = active_degree(cloud.sh_degree, s);
    cp.coeffs = cp.coeffs.first(3 * sh_coeff_count(cp.degree));
    r.rgb = evaluate_color(cp, (p - center).normalized());
    r.alpha = cloud.opacity(i);
    refs.push_back(r);
    ids.push_back(i);
  }

  RenderOutputD out;
  out.image = ImageD(cam.width, cam.height, 3);
  out.transmittance = ImageD(cam.width, cam.height, 1);
  out.weight_sum = ImageD(cam.width, cam.height, 1);
  out.contributors.assign(size_t(cam.width) * cam.height, 0);
  const double cut2 = s.cutoff_sigma > 0.0 ? s.cutoff_sigma * s.cutoff_sigma : kInf;

  struct Hit {
    double depth;
    size_t id;
    size_t ref;
    double gauss;
  };
  std::vector<Hit> hits;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Eigen::Vector2d pix(x + 0.5, y + 0.5);
      hits.clear();
      for (size_t k = 0; k < refs.size(); ++k) {
        const Eigen::Vector2d d = pix - refs[k].mean;
        const double q = d.dot(refs[k].conic * d);
        if (q > cut2) continue;
        hits.push_back({refs[k].depth, ids[k], k, std::exp(-0.5 * q)});
      }
      std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
      });
      double trans = 1.0, wsum = 0.0;
      Rgb acc{0.0, 0.0, 0.0};
      int count = 0;
      for (const Hit& h : hits) {
        const Ref& r = refs[h.ref];
        const double a = r.alpha * h.gauss;
        for (int c = 0; c < 3; ++c) acc[c] += r.rgb[c] * a * trans;
        wsum += a * trans;
        trans *= 1.0 - a;
        ++count;
        if (trans < s.min_transmittance) break;
      }
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = acc[c] + trans * s.background[c];
      out.transmittance.at(y, x) = trans;
      out.weight_sum.at(y, x) = wsum;
      out.contributors[size_t(y) * cam.width + x] = count;
    }
  }
  return out;
}

RenderOutputD render_reference(const GaussianCloud& cloud, const Camera& cam,
                               const RenderSettings& s) {
  return render_reference(cloud.cast<double>(), cam, s);
}

template struct BasicCloudGradients<float>;
template struct BasicCloudGradients<double>;
template std::optional<Splat2D<float>> project_gaussian(const GaussianCloud&, size_t,
                                                        const Camera&, const RenderSettings&);
template std::optional<Splat2D<double>> project_gaussian(const GaussianCloudD&, size_t,
                                                         const Camera&, const RenderSettings&);
template RenderOutput render(const GaussianCloud&, const Camera&, const RenderSettings&);
template RenderOutputD render(const GaussianCloudD&, const Camera&, const RenderSettings&);
template CloudGradients render_backward(const GaussianCloud&, const Camera&,
                                        const RenderSettings&, const Image&);
template CloudGradientsD render_backward(const GaussianCloudD&, const Camera&,
                                         const RenderSettings&, const ImageD&);

}  // namespace nhsplat
