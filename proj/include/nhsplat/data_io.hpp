#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nhsplat/camera.hpp"
#include "nhsplat/image.hpp"
#include "nhsplat/scene.hpp"

namespace nhsplat {

enum class Supervision { HdrRgb, BayerRaw };

std::string_view to_string(Supervision s);
Supervision parse_supervision(std::string_view s);

// PFM, 3 channels. Writes little-endian; reads either byte order.
HdrImage read_hdr_image(const std::filesystem::path& path);
void write_hdr_image(const HdrImage& img, const std::filesystem::path& path);

/// Sidecar path for a RAW mosaic: foo.pgm -> foo.json.
std::filesystem::path raw_sidecar_path(const std::filesystem::path& pgm);

// 16-bit binary PGM + JSON sidecar {pattern, black_level, white_level}.
BayerImage read_raw_image(const std::filesystem::path& path);
/// Quantizes v * (white - black) + black to the nearest integer.
void write_raw_image(const BayerImage& bayer, const std::filesystem::path& path);

struct PoseFrame {
  std::string file;
  Camera camera;
};

std::vector<PoseFrame> load_pose_frames(const std::filesystem::path& path);
std::vector<Camera> load_pose_file(const std::filesystem::path& path);
/// All frames must share intrinsics and resolution.
void write_pose_file(const std::vector<PoseFrame>& frames, const std::filesystem::path& path);

struct View {
  std::string name;
  Camera camera;
  HdrImage hdr;      // HdrRgb datasets
  BayerImage raw;    // BayerRaw datasets
};

struct Dataset {
  Supervision supervision = Supervision::HdrRgb;
  std::vector<View> train;
  std::vector<View> test;
  /// Radiance that maps to 1.0 in the stored images.
  double white_level = 1.0;
  Box bounds;
  /// Optional sparse points (positions only) for initialization.
  std::vector<Eigen::Vector3d> points;

  const std::vector<View>& split(std::string_view name) const;
  /// Throws ConfigError when views disagree on resolution or mode.
  void validate() const;
};

struct SceneSpec {
  uint64_t seed = 7;
  int gaussian_count = 64;
  /// Ground-truth centers are drawn inside a ball of this radius.
  double placement_radius = 1.0;
  double scale_min = 0.06;
  double scale_max = 0.22;
  double opacity_min = 0.6;
  double opacity_max = 0.98;
  /// Log-uniform Lum range in linear radiance units.
  double radiance_min = 1e-2;
  double radiance_max = 1e2;
  int sh_degree = 3;
  /// Amplitude of the non-DC chroma coefficients.
  double view_dependence = 0.3;
  int camera_count = 25;
  double camera_radius = 4.0;
  double elevation_deg = 20.0;
  /// Elevation alternates by this much between neighboring cameras.
  double elevation_jitter_deg = 10.0;
  double fov_deg = 50.0;
  int width = 64;
  int height = 64;
  /// Every n-th camera goes to the test split.
  int test_every = 5;
  BayerPattern pattern = BayerPattern::BGGR;
  double black_level = 512.0;
  double raw_white_level = 16383.0;
  /// Sparse points exported for initialization.
  int point_count = 0;

  void validate() const;
  std::string to_json() const;
  static SceneSpec from_json(std::string_view text);
  static SceneSpec load(const std::filesystem::path& path);
  /// FNV-1a of the canonical JSON form.
  uint64_t hash() const;
};

struct SynthResult {
  Dataset dataset;
  GaussianCloud ground_truth;  // normalized by the dataset white level
};

SynthResult synthesize_dataset(const SceneSpec& spec, Supervision mode, int threads = 1);

/// Layout: scene.json, gt_cloud.nhgc, points.json (optional), and
/// {train,test}/poses.json with one image per frame.
void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                  const GaussianCloud* ground_truth = nullptr);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace nhsplat
