#include "nhsplat/data_io.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "nhsplat/error.hpp"

namespace nhsplat {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(Supervision s) {
  return s == Supervision::HdrRgb ? "hdr" : "bayer";
}

Supervision parse_supervision(std::string_view s) {
  if (s == "hdr" || s == "hdr_rgb") return Supervision::HdrRgb;
  if (s == "bayer" || s == "bayer_raw" || s == "raw") return Supervision::BayerRaw;
  throw ConfigError("unknown supervision mode '" + std::string(s) + "' (expected hdr or bayer)");
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Netpbm-style header reader: whitespace-separated tokens, '#' comments.
class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const fs::path& path) : b_(bytes), path_(path) {}

  std::string token() {
    skip_space();
    const size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
    if (start == pos_) throw FormatError(path_.string() + ": truncated header");
    return b_.substr(start, pos_ - start);
  }

  long long integer(const char* what) {
    const std::string t = token();
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(t.c_str(), &end, 10);
    if (*end != '\0' || errno != 0) {
      throw FormatError(path_.string() + ": bad " + what + " '" + t + "'");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the payload.
  size_t payload_start() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) {
      throw FormatError(path_.string() + ": truncated header");
    }
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  const fs::path& path_;
  size_t pos_ = 0;
};

constexpr long long kMaxDim = 1 << 16;

void check_dims(long long w, long long h, const fs::path& path) {
  if (w <= 0 || h <= 0 || w > kMaxDim || h > kMaxDim) {
    throw FormatError(path.string() + ": invalid dimensions " + std::to_string(w) + "x" +
                      std::to_string(h));
  }
}

int line_of(const std::string& text, size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + int(std::count(text.begin(), text.begin() + long(byte), '\n'));
}

json parse_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ":" + std::to_string(line_of(text, e.byte)) +
                      ": malformed JSON: " + e.what());
  }
}

template <class T>
T get_field(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(ctx + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(ctx + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

HdrImage read_hdr_image(const fs::path& path) {
  const std::string bytes = read_file(path);
  HeaderReader hr(bytes, path);
  const std::string magic = hr.token();
  if (magic == "Pf") throw FormatError(path.string() + ": grayscale PFM is not supported");
  if (magic != "PF") throw FormatError(path.string() + ": bad PFM magic");
  const long long w = hr.integer("width");
  const long long h = hr.integer("height");
  check_dims(w, h, path);
  const std::string scale_tok = hr.token();
  char* end = nullptr;
  const double scale = std::strtod(scale_tok.c_str(), &end);
  if (*end != '\0' || !std::isfinite(scale) || scale == 0.0) {
    throw FormatError(path.string() + ": bad PFM scale '" + scale_tok + "'");
  }
  const bool little = scale < 0.0;
  const size_t start = hr.payload_start();
  const size_t count = size_t(w) * size_t(h) * 3;
  if (bytes.size() - start != count * 4) {
    throw FormatError(path.string() + ": expected " + std::to_string(count * 4) +
                      " payload bytes, found " + std::to_string(bytes.size() - start));
  }
  HdrImage img(int(w), int(h), 3);
  const bool swap = little != (std::endian::native == std::endian::little);
  for (long long row = 0; row < h; ++row) {
    const long long y = h - 1 - row;  // stored bottom-to-top
    for (long long k = 0; k < w * 3; ++k) {
      uint32_t u;
      std::memcpy(&u, bytes.data() + start + 4 * size_t(row * w * 3 + k), 4);
      if (swap) u = __builtin_bswap32(u);
      const float v = std::bit_cast<float>(u);
      if (!std::isfinite(v)) {
        throw FormatError(path.string() + ": non-finite pixel at (" + std::to_string(k / 3) + ", " +
                          std::to_string(y) + ")");
      }
      if (v < 0.0f) {
        throw FormatError(path.string() + ": negative radiance " + std::to_string(v) + " at (" +
                          std::to_string(k / 3) + ", " + std::to_string(y) + ")");
      }
      img.data[size_t(y * w * 3 + k)] = v;
    }
  }
  return img;
}

void write_hdr_image(const HdrImage& img, const fs::path& path) {
  if (img.channels != 3) throw InvalidArgument("write_hdr_image: expected 3 channels");
  for (size_t i = 0; i < img.data.size(); ++i) {
    if (!std::isfinite(img.data[i]) || img.data[i] < 0.0f) {
      throw InvalidArgument("write_hdr_image: pixel value " + std::to_string(img.data[i]) +
                            " at index " + std::to_string(i) + " is not a finite radiance");
    }
  }
  std::string out = "PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
  const size_t header = out.size();
  out.resize(header + img.data.size() * 4);
  const size_t row_len = size_t(img.width) * 3;
  for (int row = 0; row < img.height; ++row) {
    const int y = img.height - 1 - row;
    for (size_t k = 0; k < row_len; ++k) {
      uint32_t u = std::bit_cast<uint32_t>(img.data[size_t(y) * row_len + k]);
      if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
      std::memcpy(out.data() + header + 4 * (size_t(row) * row_len + k), &u, 4);
    }
  }
  write_file(path, out);
}

fs::path raw_sidecar_path(const fs::path& pgm) {
  fs::path p = pgm;
  p.replace_extension(".json");
  return p;
}

BayerImage read_raw_image(const fs::path& path) {
  const fs::path side = raw_sidecar_path(path);
  if (!fs::exists(side)) throw IoError(path.string() + ": missing sidecar " + side.string());
  const json meta = parse_json_file(side);
  BayerImage out;
  out.pattern = parse_bayer_pattern(get_field<std::string>(meta, "pattern", side.string()));
  out.black_level = get_field<double>(meta, "black_level", side.string());
  out.white_level = get_field<double>(meta, "white_level", side.string());
  if (!(out.white_level > out.black_level)) {
    throw FormatError(side.string() + ": white_level must exceed black_level");
  }

  const std::string bytes = read_file(path);
  HeaderReader hr(bytes, path);
  if (hr.token() != "P5") throw FormatError(path.string() + ": bad PGM magic (expected P5)");
  const long long w = hr.integer("width");
  const long long h = hr.integer("height");
  check_dims(w, h, path);
  if (w % 2 || h % 2) {
    throw FormatError(path.string() + ": Bayer mosaic dimensions must be even, got " +
                      std::to_string(w) + "x" + std::to_string(h));
  }
  const long long maxval = hr.integer("maxval");
  if (maxval <= 0 || maxval > 65535) throw FormatError(path.string() + ": bad PGM maxval");
  const size_t start = hr.payload_start();
  const size_t bpp = maxval > 255 ? 2 : 1;
  const size_t count = size_t(w) * size_t(h);
  if (bytes.size() - start != count * bpp) {
    throw FormatError(path.string() + ": expected " + std::to_string(count * bpp) +
                      " payload bytes, found " + std::to_string(bytes.size() - start));
  }
  out.mosaic = Image(int(w), int(h), 1);
  const double range = out.white_level - out.black_level;
  for (size_t i = 0; i < count; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start + i * bpp);
    const unsigned v = bpp == 2 ? (unsigned(p[0]) << 8) | p[1] : p[0];  // big-endian
    out.mosaic.data[i] = float(std::max(0.0, (double(v) - out.black_level) / range));
  }
  return out;
}

void write_raw_image(const BayerImage& bayer, const fs::path& path) {
  const Image& m = bayer.mosaic;
  if (m.channels != 1) throw InvalidArgument("write_raw_image: expected a 1-channel mosaic");
  if (!(bayer.white_level > bayer.black_level)) {
    throw InvalidArgument("write_raw_image: white_level must exceed black_level");
  }
  std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n65535\n";
  const size_t header = out.size();
  out.resize(header + m.data.size() * 2);
  const double range = bayer.white_level - bayer.black_level;
  for (size_t i = 0; i < m.data.size(); ++i) {
    const double dn = std::nearbyint(double(m.data[i]) * range + bayer.black_level);
    const auto v = uint16_t(std::clamp(dn, 0.0, 65535.0));
    out[header + 2 * i] = char(v >> 8);
    out[header + 2 * i + 1] = char(v & 0xff);
  }
  write_file(path, out);
  json meta = {{"pattern", std::string(to_string(bayer.pattern))},
               {"black_level", bayer.black_level},
               {"white_level", bayer.white_level}};
  write_file(raw_sidecar_path(path), meta.dump(2) + "\n");
}

std::vector<PoseFrame> load_pose_frames(const fs::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ":" + std::to_string(line_of(text, e.byte)) +
                      ": malformed JSON: " + e.what());
  }
  const std::string ctx = path.string();
  Camera base;
  base.fx = get_field<double>(j, "fx", ctx);
  base.fy = get_field<double>(j, "fy", ctx);
  base.width = get_field<int>(j, "width", ctx);
  base.height = get_field<int>(j, "height", ctx);
  base.cx = j.contains("cx") ? get_field<double>(j, "cx", ctx) : base.width / 2.0;
  base.cy = j.contains("cy") ? get_field<double>(j, "cy", ctx) : base.height / 2.0;
  if (!(base.fx > 0.0 && base.fy > 0.0) || base.width < 1 || base.height < 1) {
    throw FormatError(ctx + ": intrinsics must be positive");
  }
  const auto frames = get_field<json>(j, "frames", ctx);
  if (!frames.is_array()) throw FormatError(ctx + ": 'frames' must be an array");

  std::vector<PoseFrame> out;
  for (size_t f = 0; f < frames.size(); ++f) {
    const std::string fctx = ctx + ": frames[" + std::to_string(f) + "]";
    PoseFrame pf;
    pf.file = get_field<std::string>(frames[f], "file", fctx);
    const auto m = get_field<std::vector<std::vector<double>>>(frames[f], "world_to_camera", fctx);
    if (m.size() != 4 || std::any_of(m.begin(), m.end(), [](auto& r) { return r.size() != 4; })) {
      throw FormatError(fctx + ": world_to_camera must be 4x4");
    }
    Eigen::Matrix3d r;
    Eigen::Vector3d t;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) r(a, b) = m[a][b];
      t[a] = m[a][3];
    }
    if (!r.allFinite() || !t.allFinite()) throw FormatError(fctx + ": non-finite pose");
    if (m[3][0] != 0.0 || m[3][1] != 0.0 || m[3][2] != 0.0 || m[3][3] != 1.0) {
      throw FormatError(fctx + ": last row must be [0, 0, 0, 1]");
    }
    const double det = r.determinant();
    if (std::abs(det) < 1e-9) throw FormatError(fctx + ": pose is not invertible");
    if (det < 0.0) throw FormatError(fctx + ": rotation has determinant -1 (reflection)");
    const double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (err > 1e-4) {
      throw FormatError(fctx + ": rotation is not orthonormal (error " + std::to_string(err) + ")");
    }
    if (err > 1e-12) {
      Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
      r = svd.matrixU() * svd.matrixV().transpose();
    }
    pf.camera = base;
    pf.camera.rotation = r;
    pf.camera.translation = t;
    out.push_back(std::move(pf));
  }
  return out;
}

std::vector<Camera> load_pose_file(const fs::path& path) {
  std::vector<Camera> cams;
  for (auto& f : load_pose_frames(path)) cams.push_back(f.camera);
  return cams;
}

void write_pose_file(const std::vector<PoseFrame>& frames, const fs::path& path) {
  json j;
  const Camera base = frames.empty() ? Camera{} : frames.front().camera;
  j["fx"] = base.fx;
  j["fy"] = base.fy;
  j["cx"] = base.cx;
  j["cy"] = base.cy;
  j["width"] = base.width;
  j["height"] = base.height;
  j["frames"] = json::array();
  for (const auto& f : frames) {
    const Camera& c = f.camera;
    if (c.fx != base.fx || c.fy != base.fy || c.cx != base.cx || c.cy != base.cy ||
        c.width != base.width || c.height != base.height) {
      throw InvalidArgument("write_pose_file: frames must share intrinsics");
    }
    json m = json::array();
    for (int a = 0; a < 3; ++a) {
      m.push_back({c.rotation(a, 0), c.rotation(a, 1), c.rotation(a, 2), c.translation[a]});
    }
    m.push_back({0.0, 0.0, 0.0, 1.0});
    j["frames"].push_back({{"file", f.file}, {"world_to_camera", m}});
  }
  // max_digits10 round-trip is nlohmann's default for doubles
  write_file(path, j.dump(2) + "\n");
}

const std::vector<View>& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train or test)");
}

void Dataset::validate() const {
  if (!(white_level > 0.0)) throw ConfigError("dataset white level must be positive");
  const View* first = !train.empty() ? &train.front() : (!test.empty() ? &test.front() : nullptr);
  if (!first) return;
  const int w = first->camera.width, h = first->camera.height;
  for (const auto* views : {&train, &test}) {
    for (const auto& v : *views) {
      if (v.camera.width != w || v.camera.height != h) {
        throw ConfigError("view " + v.name + " has a different resolution");
      }
      if (supervision == Supervision::HdrRgb) {
        if (v.hdr.width != w || v.hdr.height != h || v.hdr.channels != 3) {
          throw ConfigError("view " + v.name + ": image does not match its camera");
        }
      } else {
        if (v.raw.width() != w || v.raw.height() != h || v.raw.mosaic.channels != 1) {
          throw ConfigError("view " + v.name + ": mosaic does not match its camera");
        }
      }
    }
  }
}

namespace {

void save_split(const std::vector<View>& views, Supervision mode, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<PoseFrame> frames;
  for (const auto& v : views) {
    const std::string file = v.name + (mode == Supervision::HdrRgb ? ".pfm" : ".pgm");
    if (mode == Supervision::HdrRgb) {
      write_hdr_image(v.hdr, dir / file);
    } else {
      write_raw_image(v.raw, dir / file);
    }
    frames.push_back({file, v.camera});
  }
  write_pose_file(frames, dir / "poses.json");
}

std::vector<View> load_split(Supervision mode, const fs::path& dir) {
  std::vector<View> views;
  if (!fs::exists(dir / "poses.json")) return views;
  for (auto& f : load_pose_frames(dir / "poses.json")) {
    View v;
    v.name = fs::path(f.file).stem().string();
    v.camera = f.camera;
    if (mode == Supervision::HdrRgb) {
      v.hdr = read_hdr_image(dir / f.file);
    } else {
      v.raw = read_raw_image(dir / f.file);
    }
    views.push_back(std::move(v));
  }
  return views;
}

}  // namespace

void save_dataset(const Dataset& data, const fs::path& dir, const GaussianCloud* ground_truth) {
  data.validate();
  fs::create_directories(dir);
  json scene = {{"supervision", std::string(to_string(data.supervision))},
                {"white_level", data.white_level},
                {"bounds", {{"lo", data.bounds.lo}, {"hi", data.bounds.hi}}},
                {"train_views", data.train.size()},
                {"test_views", data.test.size()}};
  write_file(dir / "scene.json", scene.dump(2) + "\n");
  save_split(data.train, data.supervision, dir / "train");
  save_split(data.test, data.supervision, dir / "test");
  if (!data.points.empty()) {
    json pts = json::array();
    for (const auto& p : data.points) pts.push_back({p.x(), p.y(), p.z()});
    write_file(dir / "points.json", pts.dump() + "\n");
  }
  if (ground_truth) save_cloud(*ground_truth, dir / "gt_cloud.nhgc");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path scene_path = dir / "scene.json";
  if (!fs::exists(scene_path)) throw IoError(dir.string() + ": not a dataset (no scene.json)");
  const json scene = parse_json_file(scene_path);
  const std::string ctx = scene_path.string();
  Dataset d;
  try {
    d.supervision = parse_supervision(get_field<std::string>(scene, "supervision", ctx));
  } catch (const ConfigError& e) {
    throw FormatError(ctx + ": " + e.what());
  }
  d.white_level = get_field<double>(scene, "white_level", ctx);
  const json b = get_field<json>(scene, "bounds", ctx);
  d.bounds.lo = get_field<std::array<double, 3>>(b, "lo", ctx + ": bounds");
  d.bounds.hi = get_field<std::array<double, 3>>(b, "hi", ctx + ": bounds");
  d.train = load_split(d.supervision, dir / "train");
  d.test = load_split(d.supervision, dir / "test");
  if (fs::exists(dir / "points.json")) {
    for (const auto& p : parse_json_file(dir / "points.json")) {
      const auto a = p.get<std::array<double, 3>>();
      d.points.emplace_back(a[0], a[1], a[2]);
    }
  }
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  return d;
}

}  // namespace nhsplat
