#include "nhsplat/sh_color.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "nhsplat/error.hpp"

namespace nhsplat {
namespace {

// Forward-mode value with a 3-component tangent, used to differentiate the
// basis polynomials w.r.t. the direction components.
struct Dual3 {
  double v = 0.0;
  Eigen::Vector3d d = Eigen::Vector3d::Zero();

  Dual3() = default;
  Dual3(double value) : v(value) {}  // NOLINT: implicit constant lift
  Dual3(double value, const Eigen::Vector3d& tangent) : v(value), d(tangent) {}

  friend Dual3 operator+(const Dual3& a, const Dual3& b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual3 operator-(const Dual3& a, const Dual3& b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual3 operator*(const Dual3& a, const Dual3& b) {
    return {a.v * b.v, a.v * b.d + b.v * a.d};
  }
  friend Dual3 operator*(double s, const Dual3& a) { return {s * a.v, s * a.d}; }
  friend Dual3 operator/(const Dual3& a, double s) { return {a.v / s, a.d / s}; }
};


// K_l^|m| normalization with the sqrt(2) factor folded in for m != 0.
const std::array<double, 36>& basis_norms() {
  static const std::array<double, 36> norms = [] {
    std::array<double, 36> n{};
    auto fact = [](int k) {
      double f = 1.0;
      for (int i = 2; i <= k; ++i) f *= i;
      return f;
    };
    for (int l = 0; l <= kMaxShDegree; ++l) {
      for (int m = -l; m <= l; ++m) {
        const int am = std::abs(m);
        double k = std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * fact(l - am) /
                             fact(l + am));
        if (m != 0) k *= std::numbers::sqrt2;
        n[l * l + l + m] = k;
      }
    }
    return n;
  }();
  return norms;
}

// Real SH as polynomials of a unit vector: K * Ptilde_l^m(z) * {Re,Im}((x+iy)^m),
// with Ptilde_l^m = P_l^m / sin^m(theta) (no Condon-Shortley phase).
template <class S>
void basis_poly(const S& x, const S& y, const S& z, int degree, S* out) {
  const auto& norms = basis_norms();
  S cosm[kMaxShDegree + 1];
  S sinm[kMaxShDegree + 1];
  cosm[0] = S(1.0);
  sinm[0] = S(0.0);
  for (int m = 1; m <= degree; ++m) {
    cosm[m] = cosm[m - 1] * x - sinm[m - 1] * y;
    sinm[m] = sinm[m - 1] * x + cosm[m - 1] * y;
  }
  S p[kMaxShDegree + 1];
  double pmm = 1.0;  // (2m-1)!!
  for (int m = 0; m <= degree; ++m) {
    if (m > 0) pmm *= 2.0 * m - 1.0;
    p[m] = S(pmm);
    if (m + 1 <= degree) p[m + 1] = (2.0 * m + 1.0) * (z * p[m]);
    for (int l = m + 2; l <= degree; ++l) {
      p[l] = ((2.0 * l - 1.0) * (z * p[l - 1]) - (l + m - 1.0) * p[l - 2]) / double(l - m);
    }
    for (int l = m; l <= degree; ++l) {
      const int base = l * l + l;
      if (m == 0) {
        out[base] = norms[base] * p[l];
      } else {
        out[base + m] = norms[base + m] * (p[l] * cosm[m]);
        out[base - m] = norms[base - m] * (p[l] * sinm[m]);
      }
    }
  }
}

void check_degree(int degree) {
  if (degree < 0 || degree > kMaxShDegree) {
    throw InvalidArgument("sh degree must be in [0, 5], got " + std::to_string(degree));
  }
}

}  // namespace

ViewDirection::ViewDirection(const Eigen::Vector3d& v, Policy policy) : d_(v) {
  const double n = v.norm();
  if (!std::isfinite(n) || n == 0.0) {
    throw InvalidArgument("invalid view direction: zero or non-finite vector");
  }
  if (std::abs(n - 1.0) > 1e-9) {
    if (policy == Policy::Reject) {
      throw InvalidArgument("invalid view direction: norm " + std::to_string(n) + " is not 1");
    }
    d_ = v / n;
  }
}

ViewDirection ViewDirection::from_angles(double theta, double phi) {
  return ViewDirection(Eigen::Vector3d(std::sin(theta) * std::cos(phi),
                                       std::sin(theta) * std::sin(phi), std::cos(theta)),
                       Policy::Normalize);
}

ShCoeffs::ShCoeffs(int deg) : degree(deg) {
  check_degree(deg);
  values.assign(3 * sh_coeff_count(deg), 0.0);
}

ShCoeffs::ShCoeffs(int deg, std::vector<double> v) : degree(deg), values(std::move(v)) {
  validate();
}

void ShCoeffs::validate() const {
  check_degree(degree);
  if (values.size() != size_t(3 * sh_coeff_count(degree))) {
    throw InvalidArgument("sh coefficient count " + std::to_string(values.size() / 3) +
                          " does not match degree " + std::to_string(degree));
  }
  for (double x : values) {
    if (!std::isfinite(x)) throw InvalidArgument("non-finite sh coefficient");
  }
}

double LuminanceParam::effective() const {
  if (space == LuminanceSpace::Log) return std::exp(raw);
  return std::max(raw, kLinearFloor);
}

double LuminanceParam::derivative() const {
  if (space == LuminanceSpace::Log) return std::exp(raw);
  return raw > kLinearFloor ? 1.0 : 0.0;
}

LuminanceParam LuminanceParam::from_effective(double lum, LuminanceSpace space) {
  if (!(lum > 0.0)) throw InvalidArgument("luminance must be positive");
  return {space == LuminanceSpace::Log ? std::log(lum) : lum, space};
}

std::vector<double> eval_sh_basis(const ViewDirection& d, int degree) {
  check_degree(degree);
  std::vector<double> out(sh_coeff_count(degree));
  sh_basis(d.vec(), degree, out);
  return out;
}

void sh_basis(const Eigen::Vector3d& d, int degree, std::span<double> out) {
  basis_poly<double>(d.x(), d.y(), d.z(), degree, out.data());
}

void sh_basis_with_gradient(const Eigen::Vector3d& d, int degree, std::span<double> out,
                            std::span<Eigen::Vector3d> grad) {
  Dual3 vals[sh_coeff_count(kMaxShDegree)];
  basis_poly<Dual3>(Dual3(d.x(), Eigen::Vector3d::UnitX()), Dual3(d.y(), Eigen::Vector3d::UnitY()),
                    Dual3(d.z(), Eigen::Vector3d::UnitZ()), degree, vals);
  for (int k = 0; k < sh_coeff_count(degree); ++k) {
    out[k] = vals[k].v;
    grad[k] = vals[k].d;
  }
}

namespace {

Rgb sh_sum(std::span<const double> coeffs, std::span<const double> basis, int count) {
  Rgb s{0.0, 0.0, 0.0};
  for (int k = 0; k < count; ++k) {
    for (int c = 0; c < 3; ++c) s[c] += coeffs[3 * k + c] * basis[k];
  }
  return s;
}

}  // namespace

Rgb evaluate_color(const ColorParams& p, const Eigen::Vector3d& dir) {
  const int count = sh_coeff_count(p.degree);
  double basis[sh_coeff_count(kMaxShDegree)];
  sh_basis(dir, p.degree, {basis, size_t(count)});
  Rgb s = sh_sum(p.coeffs, {basis, size_t(count)}, count);
  if (p.model == ColorModel::Entangled) {
    if (p.baseline_offset) {
      for (double& v : s) v = std::max(v + 0.5, 0.0);
    }
    return s;
  }
  const double lum = p.luminance.effective();
  for (double& v : s) v = lum * sigmoid(v);
  return s;
}

ColorBackward evaluate_color_backward(const ColorParams& p, const Eigen::Vector3d& dir,
                                      const Rgb& upstream, std::span<double> coeff_grad) {
  const int count = sh_coeff_count(p.degree);
  double basis[sh_coeff_count(kMaxShDegree)];
  Eigen::Vector3d dbasis[sh_coeff_count(kMaxShDegree)];
  sh_basis_with_gradient(dir, p.degree, {basis, size_t(count)}, {dbasis, size_t(count)});
  const Rgb s = sh_sum(p.coeffs, {basis, size_t(count)}, count);

  // dL/d(sh sum) per channel
  Rgb gs{};
  ColorBackward out;
  if (p.model == ColorModel::Entangled) {
    for (int c = 0; c < 3; ++c) {
      const bool clamped = p.baseline_offset && s[c] + 0.5 < 0.0;
      gs[c] = clamped ? 0.0 : upstream[c];
    }
  } else {
    const double lum = p.luminance.effective();
    double glum = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double f = sigmoid(s[c]);
      gs[c] = upstream[c] * lum * f * (1.0 - f);
      glum += upstream[c] * f;
    }
    out.luminance_raw = glum * p.luminance.derivative();
  }
  for (int k = 0; k < count; ++k) {
    double proj = 0.0;
    for (int c = 0; c < 3; ++c) {
      coeff_grad[3 * k + c] += gs[c] * basis[k];
      proj += gs[c] * p.coeffs[3 * k + c];
    }
    out.direction += proj * dbasis[k];
  }
  return out;
}

Rgb color_entangled(const ViewDirection& d, const ShCoeffs& k, bool baseline_offset) {
  k.validate();
  return evaluate_color({ColorModel::Entangled, k.degree, k.values, {}, baseline_offset}, d.vec());
}

Rgb color_decomposed(const ViewDirection& d, const LuminanceParam& lum, const ShCoeffs& b) {
  b.validate();
  return evaluate_color({ColorModel::Decomposed, b.degree, b.values, lum, false}, d.vec());
}

ColorGradients color_gradients_entangled(const ViewDirection& d, const ShCoeffs& k,
                                         bool baseline_offset, const Rgb& upstream) {
  k.validate();
  ColorGradients g;
  g.coeffs.assign(k.values.size(), 0.0);
  auto back = evaluate_color_backward(
      {ColorModel::Entangled, k.degree, k.values, {}, baseline_offset}, d.vec(), upstream,
      g.coeffs);
  g.direction = back.direction;
  return g;
}

ColorGradients color_gradients_decomposed(const ViewDirection& d, const LuminanceParam& lum,
                                          const ShCoeffs& b, const Rgb& upstream) {
  b.validate();
  ColorGradients g;
  g.coeffs.assign(b.values.size(), 0.0);
  auto back = evaluate_color_backward({ColorModel::Decomposed, b.degree, b.values, lum, false},
                                      d.vec(), upstream, g.coeffs);
  g.luminance_raw = back.luminance_raw;
  g.direction = back.direction;
  return g;
}

}  // namespace nhsplat
