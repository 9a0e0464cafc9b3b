#include "nhsplat/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "nhsplat/error.hpp"

namespace nhsplat {

using json = nlohmann::json;

Eigen::Matrix3d rotation_matrix(const Eigen::Vector4d& q_raw) {
  const Eigen::Vector4d q = q_raw.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

template <class T>
BasicGaussianCloud<T>::BasicGaussianCloud(ColorModel model, int degree, LuminanceSpace space,
                                          Box box)
    : color_model(model), sh_degree(degree), luminance_space(space), bounds(box) {
  if (degree < 0 || degree > kMaxShDegree) {
    throw ConfigError("sh degree must be in [0, 5]");
  }
}

template <class T>
void BasicGaussianCloud<T>::reserve(size_t n) {
  positions.reserve(3 * n);
  log_scales.reserve(3 * n);
  rotations.reserve(4 * n);
  opacity_logits.reserve(n);
  if (decomposed()) luminance.reserve(n);
  sh.reserve(n * sh_stride());
}

template <class T>
void BasicGaussianCloud<T>::push_back(const Gaussian& g) {
  if (g.sh.size() != size_t(sh_stride())) {
    throw InvalidArgument("gaussian sh size does not match the cloud's sh degree");
  }
  for (int k = 0; k < 3; ++k) positions.push_back(T(g.position[k]));
  for (int k = 0; k < 3; ++k) log_scales.push_back(T(g.log_scale[k]));
  for (int k = 0; k < 4; ++k) rotations.push_back(T(g.rotation[k]));
  opacity_logits.push_back(T(g.opacity_logit));
  if (decomposed()) luminance.push_back(T(g.luminance_raw));
  for (double v : g.sh) sh.push_back(T(v));
}

template <class T>
Gaussian BasicGaussianCloud<T>::gaussian(size_t i) const {
  Gaussian g;
  for (int k = 0; k < 3; ++k) {
    g.position[k] = positions[3 * i + k];
    g.log_scale[k] = log_scales[3 * i + k];
  }
  for (int k = 0; k < 4; ++k) g.rotation[k] = rotations[4 * i + k];
  g.opacity_logit = opacity_logits[i];
  g.luminance_raw = decomposed() ? double(luminance[i]) : 0.0;
  const size_t stride = sh_stride();
  g.sh.assign(sh.begin() + i * stride, sh.begin() + (i + 1) * stride);
  return g;
}

template <class T>
void BasicGaussianCloud<T>::gather(std::span<const size_t> order) {
  auto pick = [&](std::vector<T>& v, size_t stride) {
    std::vector<T> out;
    out.reserve(order.size() * stride);
    for (size_t i : order) out.insert(out.end(), v.begin() + i * stride, v.begin() + (i + 1) * stride);
    v = std::move(out);
  };
  pick(positions, 3);
  pick(log_scales, 3);
  pick(rotations, 4);
  pick(opacity_logits, 1);
  if (decomposed()) pick(luminance, 1);
  pick(sh, sh_stride());
}

template <class T>
void BasicGaussianCloud<T>::normalize_rotations() {
  for (size_t i = 0; i < size(); ++i) {
    T* q = &rotations[4 * i];
    const T n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (n > T(0)) {
      for (int k = 0; k < 4; ++k) q[k] /= n;
    } else {
      q[0] = T(1);
    }
  }
}

template <class T>
Eigen::Matrix3d BasicGaussianCloud<T>::covariance(size_t i) const {
  const Eigen::Vector4d q(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2],
                          rotations[4 * i + 3]);
  const Eigen::Matrix3d r = rotation_matrix(q);
  Eigen::Vector3d s2;
  for (int k = 0; k < 3; ++k) s2[k] = std::exp(2.0 * double(log_scales[3 * i + k]));
  return r * s2.asDiagonal() * r.transpose();
}

template <class T>
ColorParams BasicGaussianCloud<T>::color_params(size_t i, std::vector<double>& scratch,
                                                bool baseline_offset) const {
  const size_t stride = sh_stride();
  scratch.assign(sh.begin() + i * stride, sh.begin() + (i + 1) * stride);
  ColorParams p;
  p.model = color_model;
  p.degree = sh_degree;
  p.coeffs = scratch;
  if (decomposed()) p.luminance = {double(luminance[i]), luminance_space};
  p.baseline_offset = baseline_offset;
  return p;
}

template struct BasicGaussianCloud<float>;
template struct BasicGaussianCloud<double>;

namespace {


double logit(double p) { return std::log(p / (1.0 - p)); }

std::vector<double> mean_neighbor_distance(const std::vector<Eigen::Vector3d>& pts, const Box& b) {
  const size_t n = pts.size();
  std::vector<double> out(n);
  if (n <= 1 || n > 8192) {
    // Expected nearest-neighbor spacing of n uniform points in the box volume.
    double vol = 1.0;
    for (int k = 0; k < 3; ++k) vol *= b.hi[k] - b.lo[k];
    std::fill(out.begin(), out.end(), 0.554 * std::cbrt(vol / double(n)));
    return out;
  }
  constexpr int kNeighbors = 3;
  for (size_t i = 0; i < n; ++i) {
    std::array<double, kNeighbors> best;
    best.fill(std::numeric_limits<double>::infinity());
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = (pts[i] - pts[j]).squaredNorm();
      if (d2 < best.back()) {
        best.back() = d2;
        std::sort(best.begin(), best.end());
      }
    }
    double sum = 0.0;
    int used = 0;
    for (double d2 : best) {
      if (std::isfinite(d2)) {
        sum += std::sqrt(d2);
        ++used;
      }
    }
    out[i] = std::max(used > 0 ? sum / used : 1e-3, 1e-7);
  }
  return out;
}

}  // namespace

GaussianCloud init_cloud(const InitOptions& opts) {
  if (opts.count == 0) throw ConfigError("init_cloud: gaussian count must be >= 1");
  if (opts.bounds.degenerate()) throw ConfigError("init_cloud: degenerate scene bounds");
  if (opts.color_model == ColorModel::Decomposed && !(opts.init_luminance > 0.0)) {
    throw ConfigError("init_cloud: init luminance must be positive");
  }

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Eigen::Vector3d> pts(opts.count);
  const double jitter = 0.01 * opts.bounds.diagonal();
  for (size_t i = 0; i < opts.count; ++i) {
    if (!opts.points.empty()) {
      pts[i] = opts.points[i % opts.points.size()];
      if (i >= opts.points.size()) {
        for (int k = 0; k < 3; ++k) pts[i][k] += jitter * normal(rng);
      }
    } else {
      for (int k = 0; k < 3; ++k) {
        pts[i][k] = opts.bounds.lo[k] + (opts.bounds.hi[k] - opts.bounds.lo[k]) * unit(rng);
      }
    }
  }
  const auto spacing = mean_neighbor_distance(pts, opts.bounds);

  GaussianCloud cloud(opts.color_model, opts.sh_degree, opts.luminance_space, opts.bounds);
  cloud.reserve(opts.count);
  Gaussian g;
  g.sh.assign(3 * sh_coeff_count(opts.sh_degree), 0.0);
  if (opts.color_model == ColorModel::Entangled) {
    const double dc = (0.5 - (opts.baseline_offset ? 0.5 : 0.0)) / kShC0;
    for (int c = 0; c < 3; ++c) g.sh[c] = dc;
  } else {
    g.luminance_raw = LuminanceParam::from_effective(opts.init_luminance, opts.luminance_space).raw;
  }
  g.opacity_logit = logit(opts.init_opacity);
  for (size_t i = 0; i < opts.count; ++i) {
    g.position = pts[i];
    g.log_scale.setConstant(std::log(spacing[i]));
    cloud.push_back(g);
  }
  return cloud;
}

void DensityStats::add(std::span<const double> grad_norms, std::span<const uint8_t> was_visible) {
  for (size_t i = 0; i < grad_sum.size() && i < grad_norms.size(); ++i) {
    if (was_visible[i]) {
      grad_sum[i] += grad_norms[i];
      visible[i] += 1;
    }
  }
}

DensifyResult densify_and_prune(GaussianCloud& cloud, const DensityStats& stats,
                                const AdcConfig& cfg, std::mt19937_64& rng) {
  DensifyResult res;
  const size_t n = cloud.size();
  res.source.resize(n);
  for (size_t i = 0; i < n; ++i) res.source[i] = long(i);
  if (!cfg.enabled) return res;

  const double extent = 0.5 * cloud.bounds.diagonal();
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Gaussian> added;
  std::vector<uint8_t> remove(n, 0);
  size_t total = n;
  for (size_t i = 0; i < n && i < stats.grad_sum.size(); ++i) {
    if (stats.mean(i) < cfg.grad_threshold) continue;
    Gaussian g = cloud.gaussian(i);
    const double max_scale = std::exp(g.log_scale.maxCoeff());
    if (max_scale <= cfg.percent_dense * extent) {
      if (total + 1 > cfg.max_gaussians) continue;
      added.push_back(g);
      total += 1;
      res.cloned += 1;
    } else {
      // Two children replace the parent: net +1.
      if (total + 1 > cfg.max_gaussians) continue;
      const Eigen::Matrix3d r = rotation_matrix(g.rotation);
      const Eigen::Vector3d s = g.log_scale.array().exp();
      for (int child = 0; child < 2; ++child) {
        Gaussian c = g;
        Eigen::Vector3d z(normal(rng), normal(rng), normal(rng));
        c.position = g.position + r * (s.cwiseProduct(z));
        c.log_scale = (s / cfg.split_scale_divisor).array().log();
        added.push_back(std::move(c));
      }
      remove[i] = 1;
      total += 1;
      res.split += 1;
    }
  }

  std::vector<size_t> keep;
  std::vector<long> source;
  for (size_t i = 0; i < n; ++i) {
    if (remove[i] || cloud.opacity(i) < cfg.min_opacity) {
      if (!remove[i]) res.pruned += 1;
      continue;
    }
    keep.push_back(i);
    source.push_back(long(i));
  }
  cloud.gather(keep);
  for (const auto& g : added) {
    if (sigmoid(g.opacity_logit) < cfg.min_opacity) {
      res.pruned += 1;
      continue;
    }
    cloud.push_back(g);
    source.push_back(-1);
  }
  res.source = std::move(source);
  return res;
}

// ---------------------------------------------------------------------------
// Cloud file: "NHGC" | u32 version | u32 header_len | JSON header | f32 records

namespace {

constexpr char kMagic[4] = {'N', 'H', 'G', 'C'};

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

template <class U>
void write_le(std::ostream& os, U v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_le(std::istream& is, const std::string& what) {
  U v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw FormatError("cloud file truncated while reading " + what);
  }
  return to_little(v);
}

json field_order(bool decomposed, int stride) {
  json f = json::array();
  f.push_back({{"name", "position"}, {"count", 3}});
  f.push_back({{"name", "log_scale"}, {"count", 3}});
  f.push_back({{"name", "rotation_wxyz"}, {"count", 4}});
  f.push_back({{"name", "opacity_logit"}, {"count", 1}});
  if (decomposed) f.push_back({{"name", "luminance_raw"}, {"count", 1}});
  f.push_back({{"name", "sh"}, {"count", stride}});
  return f;
}

}  // namespace

void save_cloud(const GaussianCloud& cloud, const std::filesystem::path& path) {
  json header = {
      {"count", cloud.size()},
      {"color_model", to_string(cloud.color_model)},
      {"sh_degree", cloud.sh_degree},
      {"luminance_space", to_string(cloud.luminance_space)},
      {"bounds", {{"lo", cloud.bounds.lo}, {"hi", cloud.bounds.hi}}},
      {"fields", field_order(cloud.decomposed(), cloud.sh_stride())},
  };
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  write_le<uint32_t>(os, kCloudFormatVersion);
  write_le<uint32_t>(os, uint32_t(text.size()));
  os.write(text.data(), std::streamsize(text.size()));
  const size_t stride = cloud.sh_stride();
  for (size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) write_le<float>(os, cloud.positions[3 * i + k]);
    for (int k = 0; k < 3; ++k) write_le<float>(os, cloud.log_scales[3 * i + k]);
    for (int k = 0; k < 4; ++k) write_le<float>(os, cloud.rotations[4 * i + k]);
    write_le<float>(os, cloud.opacity_logits[i]);
    if (cloud.decomposed()) write_le<float>(os, cloud.luminance[i]);
    for (size_t k = 0; k < stride; ++k) write_le<float>(os, cloud.sh[i * stride + k]);
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

GaussianCloud load_cloud(const std::filesystem::path& path, std::optional<ColorModel> expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("'" + path.string() + "' is not a gaussian cloud file (bad magic)");
  }
  const auto version = read_le<uint32_t>(is, "version");
  if (version != kCloudFormatVersion) {
    throw FormatError("unsupported cloud file version " + std::to_string(version));
  }
  const auto header_len = read_le<uint32_t>(is, "header length");
  if (header_len > (1u << 24)) throw FormatError("cloud header length is implausible");
  std::string text(header_len, '\0');
  if (!is.read(text.data(), header_len)) throw FormatError("cloud file truncated in header");

  json header;
  ColorModel model;
  int degree;
  LuminanceSpace space;
  size_t count;
  Box bounds;
  try {
    header = json::parse(text);
    model = parse_color_model(header.at("color_model").get<std::string>());
    degree = header.at("sh_degree").get<int>();
    space = parse_luminance_space(header.value("luminance_space", std::string("log")));
    count = header.at("count").get<size_t>();
    bounds.lo = header.at("bounds").at("lo").get<std::array<double, 3>>();
    bounds.hi = header.at("bounds").at("hi").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid cloud header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid cloud header: ") + e.what());
  }
  if (degree < 0 || degree > kMaxShDegree) throw FormatError("cloud sh_degree out of range");
  if (expected && *expected != model) {
    throw FormatError("color model mismatch: file holds a " + std::string(to_string(model)) +
                      " cloud but " + std::string(to_string(*expected)) + " was requested");
  }

  GaussianCloud cloud(model, degree, space, bounds);
  cloud.reserve(count);
  const size_t stride = cloud.sh_stride();
  for (size_t i = 0; i < count; ++i) {
    const std::string what = "gaussian " + std::to_string(i);
    for (int k = 0; k < 3; ++k) cloud.positions.push_back(read_le<float>(is, what));
    for (int k = 0; k < 3; ++k) cloud.log_scales.push_back(read_le<float>(is, what));
    for (int k = 0; k < 4; ++k) cloud.rotations.push_back(read_le<float>(is, what));
    cloud.opacity_logits.push_back(read_le<float>(is, what));
    if (cloud.decomposed()) cloud.luminance.push_back(read_le<float>(is, what));
    for (size_t k = 0; k < stride; ++k) cloud.sh.push_back(read_le<float>(is, what));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("cloud file has trailing bytes after " + std::to_string(count) + " records");
  }

  auto finite = [](const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
  };
  if (!finite(cloud.positions) || !finite(cloud.log_scales) || !finite(cloud.rotations) ||
      !finite(cloud.opacity_logits) || !finite(cloud.luminance) || !finite(cloud.sh)) {
    throw FormatError("cloud file contains non-finite parameters");
  }
  for (size_t i = 0; i < count; ++i) {
    const float* q = &cloud.rotations[4 * i];
    const double n = std::sqrt(double(q[0]) * q[0] + double(q[1]) * q[1] + double(q[2]) * q[2] +
                               double(q[3]) * q[3]);
    if (std::abs(n - 1.0) > 1e-5) {
      throw FormatError("gaussian " + std::to_string(i) + " has a non-unit rotation quaternion");
    }
  }
  return cloud;
}

}  // namespace nhsplat
