#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <sstream>

#include "nhsplat/data_io.hpp"
#include "nhsplat/error.hpp"
#include "nhsplat/parallel.hpp"
#include "nhsplat/photometry.hpp"
#include "nhsplat/rasterizer.hpp"

namespace nhsplat {

using json = nlohmann::json;

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("scene spec: " + m); };
  if (gaussian_count < 1) fail("gaussian_count must be at least 1");
  if (!(placement_radius > 0.0)) fail("placement_radius must be positive");
  if (!(scale_min > 0.0 && scale_max >= scale_min)) fail("need 0 < scale_min <= scale_max");
  if (!(opacity_min > 0.0 && opacity_max < 1.0 && opacity_min <= opacity_max)) {
    fail("need 0 < opacity_min <= opacity_max < 1");
  }
  if (!(radiance_min > 0.0 && radiance_max >= radiance_min)) {
    fail("need 0 < radiance_min <= radiance_max");
  }
  if (sh_degree < 0 || sh_degree > kMaxShDegree) fail("sh_degree must be in [0, 5]");
  if (!(view_dependence >= 0.0)) fail("view_dependence must be non-negative");
  if (camera_count < 2) fail("the camera ring needs at least 2 cameras");
  if (!(camera_radius > placement_radius)) fail("camera_radius must exceed placement_radius");
  if (!(std::abs(elevation_deg) < 89.0) || !(std::abs(elevation_jitter_deg) < 89.0) ||
      !(std::abs(elevation_deg) + std::abs(elevation_jitter_deg) < 89.0)) {
    fail("camera elevation must stay within (-89, 89) degrees");
  }
  if (!(fov_deg > 1.0 && fov_deg < 170.0)) fail("fov_deg must be in (1, 170)");
  if (width < 2 || height < 2 || width % 2 || height % 2 || width > 8192 || height > 8192) {
    fail("width and height must be even and in [2, 8192]");
  }
  if (test_every < 2 || test_every > camera_count) fail("test_every must be in [2, camera_count]");
  if (!(black_level >= 0.0 && raw_white_level > black_level && raw_white_level <= 65535.0)) {
    fail("need 0 <= black_level < raw_white_level <= 65535");
  }
  if (point_count < 0) fail("point_count must be non-negative");
}

std::string SceneSpec::to_json() const {
  json j = {{"seed", seed},
            {"gaussian_count", gaussian_count},
            {"placement_radius", placement_radius},
            {"scale_min", scale_min},
            {"scale_max", scale_max},
            {"opacity_min", opacity_min},
            {"opacity_max", opacity_max},
            {"radiance_min", radiance_min},
            {"radiance_max", radiance_max},
            {"sh_degree", sh_degree},
            {"view_dependence", view_dependence},
            {"camera_count", camera_count},
            {"camera_radius", camera_radius},
            {"elevation_deg", elevation_deg},
            {"elevation_jitter_deg", elevation_jitter_deg},
            {"fov_deg", fov_deg},
            {"width", width},
            {"height", height},
            {"test_every", test_every},
            {"pattern", std::string(nhsplat::to_string(pattern))},
            {"black_level", black_level},
            {"raw_white_level", raw_white_level},
            {"point_count", point_count}};
  return j.dump(2) + "\n";
}

SceneSpec SceneSpec::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scene spec: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scene spec: expected a JSON object");
  SceneSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "seed") s.seed = v.get<uint64_t>();
      else if (k == "gaussian_count") s.gaussian_count = v.get<int>();
      else if (k == "placement_radius") s.placement_radius = v.get<double>();
      else if (k == "scale_min") s.scale_min = v.get<double>();
      else if (k == "scale_max") s.scale_max = v.get<double>();
      else if (k == "opacity_min") s.opacity_min = v.get<double>();
      else if (k == "opacity_max") s.opacity_max = v.get<double>();
      else if (k == "radiance_min") s.radiance_min = v.get<double>();
      else if (k == "radiance_max") s.radiance_max = v.get<double>();
      else if (k == "sh_degree") s.sh_degree = v.get<int>();
      else if (k == "view_dependence") s.view_dependence = v.get<double>();
      else if (k == "camera_count") s.camera_count = v.get<int>();
      else if (k == "camera_radius") s.camera_radius = v.get<double>();
      else if (k == "elevation_deg") s.elevation_deg = v.get<double>();
      else if (k == "elevation_jitter_deg") s.elevation_jitter_deg = v.get<double>();
      else if (k == "fov_deg") s.fov_deg = v.get<double>();
      else if (k == "width") s.width = v.get<int>();
      else if (k == "height") s.height = v.get<int>();
      else if (k == "test_every") s.test_every = v.get<int>();
      else if (k == "pattern") s.pattern = parse_bayer_pattern(v.get<std::string>());
      else if (k == "black_level") s.black_level = v.get<double>();
      else if (k == "raw_white_level") s.raw_white_level = v.get<double>();
      else if (k == "point_count") s.point_count = v.get<int>();
      else if (k == "description") {}
      else throw ConfigError("scene spec: unknown field '" + k + "'");
    } catch (const json::exception&) {
      throw ConfigError("scene spec: field '" + k + "' has the wrong type");
    } catch (const FormatError& e) {
      throw ConfigError(std::string("scene spec: ") + e.what());
    }
  }
  s.validate();
  return s;
}

SceneSpec SceneSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

uint64_t SceneSpec::hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : to_json()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

std::vector<Camera> camera_ring(const SceneSpec& s) {
  const double f = 0.5 * s.width / std::tan(0.5 * s.fov_deg * std::numbers::pi / 180.0);
  std::vector<Camera> cams;
  for (int i = 0; i < s.camera_count; ++i) {
    const double az = 2.0 * std::numbers::pi * i / s.camera_count;
    const double el =
        (s.elevation_deg + (i % 2 ? 1.0 : -1.0) * s.elevation_jitter_deg) * std::numbers::pi / 180.0;
    const Eigen::Vector3d eye(s.camera_radius * std::cos(el) * std::cos(az),
                              s.camera_radius * std::cos(el) * std::sin(az),
                              s.camera_radius * std::sin(el));
    cams.push_back(Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), f, f,
                                   s.width, s.height));
  }
  return cams;
}

GaussianCloudD ground_truth_cloud(const SceneSpec& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double r = s.placement_radius;
  Box box;
  for (int k = 0; k < 3; ++k) {
    box.lo[k] = -(r + 3.0 * s.scale_max);
    box.hi[k] = r + 3.0 * s.scale_max;
  }
  GaussianCloudD cloud(ColorModel::Decomposed, s.sh_degree, LuminanceSpace::Log, box);
  const int coeffs = sh_coeff_count(s.sh_degree);
  for (int i = 0; i < s.gaussian_count; ++i) {
    Gaussian g;
    do {
      for (int k = 0; k < 3; ++k) g.position[k] = r * (2.0 * uni(rng) - 1.0);
    } while (g.position.norm() > r);
    for (int k = 0; k < 3; ++k) {
      g.log_scale[k] = std::log(s.scale_min) + uni(rng) * std::log(s.scale_max / s.scale_min);
    }
    for (int k = 0; k < 4; ++k) g.rotation[k] = normal(rng);
    g.rotation.normalize();
    const double op = s.opacity_min + uni(rng) * (s.opacity_max - s.opacity_min);
    g.opacity_logit = std::log(op / (1.0 - op));
    g.luminance_raw =
        std::log(s.radiance_min) + uni(rng) * std::log(s.radiance_max / s.radiance_min);
    g.sh.assign(size_t(3 * coeffs), 0.0);
    for (int c = 0; c < 3; ++c) {
      const double chroma = 0.15 + 0.8 * uni(rng);
      g.sh[c] = std::log(chroma / (1.0 - chroma)) / kShC0;
    }
    for (int k = 1; k < coeffs; ++k) {
      const int l = int(std::sqrt(double(k)));
      for (int c = 0; c < 3; ++c) g.sh[3 * k + c] = s.view_dependence * normal(rng) / (l * l);
    }
    cloud.push_back(g);
  }
  return cloud;
}

}  // namespace

SynthResult synthesize_dataset(const SceneSpec& spec, Supervision mode, int threads) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  GaussianCloudD gt = ground_truth_cloud(spec, rng);
  const std::vector<Camera> cams = camera_ring(spec);
  RenderSettings rs;

  // White level: brightest pixel over all views of the unnormalized scene.
  std::vector<double> peaks(cams.size(), 0.0);
  parallel_for(cams.size(), threads, [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      const auto out = render_reference(gt, cams[i], rs);
      for (double v : out.image.data) peaks[i] = std::max(peaks[i], v);
    }
  });
  const double white = *std::max_element(peaks.begin(), peaks.end());
  if (!(white > 0.0)) throw ConfigError("scene spec: ground truth is invisible from every camera");
  for (double& lum : gt.luminance) lum -= std::log(white);

  SynthResult res;
  res.ground_truth = gt.cast<float>();
  Dataset& d = res.dataset;
  d.supervision = mode;
  d.white_level = white;
  d.bounds = gt.bounds;

  std::vector<View> views(cams.size());
  parallel_for(cams.size(), threads, [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      View& v = views[i];
      char name[16];
      std::snprintf(name, sizeof name, "r_%03zu", i);
      v.name = name;
      v.camera = cams[i];
      // Rendering the stored fp32 cloud keeps files and cloud consistent.
      v.hdr = render_reference(res.ground_truth, cams[i], rs).image.cast<float>();
      if (mode == Supervision::BayerRaw) {
        v.raw = bayer_mask(v.hdr, spec.pattern);
        v.raw.black_level = spec.black_level;
        v.raw.white_level = spec.raw_white_level;
        const double range = spec.raw_white_level - spec.black_level;
        for (float& x : v.raw.mosaic.data) {
          const double dn =
              std::clamp(std::nearbyint(double(x) * range + spec.black_level), 0.0, 65535.0);
          x = float(std::max(0.0, (dn - spec.black_level) / range));
        }
        v.hdr = HdrImage();
      }
    }
  });
  for (size_t i = 0; i < views.size(); ++i) {
    (int(i) % spec.test_every == 0 ? d.test : d.train).push_back(std::move(views[i]));
  }

  std::normal_distribution<double> jitter(0.0, spec.scale_max);
  for (int i = 0; i < spec.point_count; ++i) {
    const size_t src = size_t(i) % gt.size();
    Eigen::Vector3d p = gt.position(src);
    for (int k = 0; k < 3; ++k) p[k] += jitter(rng);
    d.points.push_back(p);
  }
  d.validate();
  return res;
}

}  // namespace nhsplat
