#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <fstream>
#include <iterator>

#include "nhsplat/error.hpp"
#include "nhsplat/rasterizer.hpp"
#include "nhsplat/scene.hpp"
#include "test_util.hpp"

using namespace nhsplat;
using nhsplat::test::TempDir;

namespace {

std::string bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& b) {
  std::ofstream(p, std::ios::binary | std::ios::trunc).write(b.data(), std::streamsize(b.size()));
}

InitOptions small_init(ColorModel model, size_t n = 16) {
  InitOptions o;
  o.count = n;
  o.seed = 11;
  o.color_model = model;
  o.sh_degree = 2;
  o.init_luminance = 0.8;
  return o;
}

}  // namespace

TEST_CASE("init is deterministic per seed") {
  TempDir dir("scene_init");
  const auto a = init_cloud(small_init(ColorModel::Decomposed, 1));
  const auto b = init_cloud(small_init(ColorModel::Decomposed, 1));
  CHECK(a == b);
  save_cloud(a, dir / "a.nhgc");
  save_cloud(b, dir / "b.nhgc");
  CHECK(bytes_of(dir / "a.nhgc") == bytes_of(dir / "b.nhgc"));

  auto o = small_init(ColorModel::Decomposed, 1);
  o.seed = 12;
  CHECK(!(init_cloud(o) == a));
}

TEST_CASE("init values") {
  const auto e = init_cloud(small_init(ColorModel::Entangled));
  const auto d = init_cloud(small_init(ColorModel::Decomposed));
  REQUIRE(e.size() == 16);
  CHECK(e.luminance.empty());
  CHECK(d.luminance.size() == 16);
  for (size_t i = 0; i < e.size(); ++i) {
    CHECK(e.opacity(i) == doctest::Approx(0.1).epsilon(1e-6));
    // 0.5 gray after the baseline offset: DC = 0.
    for (int c = 0; c < 3; ++c) CHECK(e.sh[i * e.sh_stride() + c] == 0.0f);
    for (int k = 3; k < e.sh_stride(); ++k) CHECK(e.sh[i * e.sh_stride() + k] == 0.0f);
    CHECK(std::exp(double(d.luminance[i])) == doctest::Approx(0.8).epsilon(1e-6));
    for (int k = 0; k < d.sh_stride(); ++k) CHECK(d.sh[i * d.sh_stride() + k] == 0.0f);
    const Eigen::Vector3d p = d.position(i);
    for (int k = 0; k < 3; ++k) {
      CHECK(p[k] >= d.bounds.lo[k]);
      CHECK(p[k] <= d.bounds.hi[k]);
    }
  }
  auto no_offset = small_init(ColorModel::Entangled);
  no_offset.baseline_offset = false;
  const auto e2 = init_cloud(no_offset);
  CHECK(double(e2.sh[0]) * kShC0 == doctest::Approx(0.5));
}

TEST_CASE("init from sparse points") {
  auto o = small_init(ColorModel::Decomposed, 6);
  o.points = {{0.1, 0.2, 0.3}, {-0.4, 0.0, 0.5}, {0.0, 0.0, 0.0}};
  const auto c = init_cloud(o);
  for (size_t i = 0; i < 3; ++i) {
    CHECK((c.position(i) - o.points[i]).norm() < 1e-6);
  }
  CHECK((c.position(3) - o.points[0]).norm() > 0.0);
  CHECK((c.position(3) - o.points[0]).norm() < 0.5);
}

TEST_CASE("init errors") {
  auto o = small_init(ColorModel::Decomposed);
  o.count = 0;
  CHECK_THROWS_AS(init_cloud(o), ConfigError);
  o = small_init(ColorModel::Decomposed);
  o.bounds.hi[1] = o.bounds.lo[1];
  CHECK_THROWS_AS(init_cloud(o), ConfigError);
}

TEST_CASE("decomposed init renders at half the init luminance") {
  auto o = small_init(ColorModel::Decomposed, 1);
  o.init_luminance = 3.0;
  GaussianCloud c = init_cloud(o);
  c.positions = {0.0f, 0.0f, 0.0f};
  c.log_scales = {0.0f, 0.0f, 0.0f};
  c.opacity_logits = {30.0f};
  const Camera cam = test::front_camera(16, 16, 20.0);
  const auto out = render(c, cam, RenderSettings{});
  // Pixel (8,8) is centered half a pixel off the projected mean in x and y.
  const double var = std::pow(20.0 / 4.0, 2) + 0.3;
  const double falloff = std::exp(-0.5 * 0.5 / var);
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(out.image.at(8, 8, ch) == doctest::Approx(1.5 * falloff).epsilon(1e-4));
  }
}

TEST_CASE("covariance is symmetric positive semi-definite") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-4.0, 2.0);
  std::normal_distribution<double> n(0.0, 1.0);
  GaussianCloudD c(ColorModel::Entangled, 0, LuminanceSpace::Log, Box{});
  for (int i = 0; i < 1000; ++i) {
    Gaussian g;
    g.log_scale = {u(rng), u(rng), u(rng)};
    g.rotation = {n(rng), n(rng), n(rng), n(rng)};
    g.sh = {0, 0, 0};
    c.push_back(g);
  }
  for (size_t i = 0; i < c.size(); ++i) {
    const Eigen::Matrix3d s = c.covariance(i);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("cloud file round trip and validation") {
  TempDir dir("scene_io");
  for (auto model : {ColorModel::Entangled, ColorModel::Decomposed}) {
    auto o = small_init(model, 37);
    o.sh_degree = 3;
    GaussianCloud c = init_cloud(o);
    std::mt19937_64 rng(5);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (float& v : c.sh) v = n(rng);
    const auto path = dir / "c.nhgc";
    save_cloud(c, path);
    const GaussianCloud back = load_cloud(path);
    CHECK(back == c);
    CHECK_NOTHROW(load_cloud(path, model));
    const auto other = model == ColorModel::Entangled ? ColorModel::Decomposed : ColorModel::Entangled;
    CHECK_THROWS_AS(load_cloud(path, other), FormatError);

    const std::string good = bytes_of(path);
    std::string bad = good;
    bad[0] = 'X';
    write_bytes(path, bad);
    CHECK_THROWS_AS(load_cloud(path), FormatError);

    bad = good;
    bad[4] = 9;  // version
    write_bytes(path, bad);
    CHECK_THROWS_AS(load_cloud(path), FormatError);

    write_bytes(path, good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_cloud(path), FormatError);

    write_bytes(path, good + "xx");
    CHECK_THROWS_AS(load_cloud(path), FormatError);
  }
  CHECK_THROWS_AS(load_cloud(dir / "missing.nhgc"), IoError);
}

TEST_CASE("load rejects a non-unit quaternion") {
  TempDir dir("scene_quat");
  GaussianCloud c = init_cloud(small_init(ColorModel::Entangled, 2));
  c.rotations[4] = 2.0f;
  save_cloud(c, dir / "q.nhgc");
  CHECK_THROWS_AS(load_cloud(dir / "q.nhgc"), FormatError);
}

TEST_CASE("normalize rotations") {
  GaussianCloud c = init_cloud(small_init(ColorModel::Entangled, 3));
  c.rotations = {2, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0.5f};
  c.normalize_rotations();
  for (size_t i = 0; i < 3; ++i) {
    double n2 = 0;
    for (int k = 0; k < 4; ++k) n2 += double(c.rotations[4 * i + k]) * c.rotations[4 * i + k];
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
  }
}

TEST_CASE("densify and prune rules") {
  AdcConfig cfg;
  cfg.enabled = true;
  std::mt19937_64 rng(3);
  auto base = small_init(ColorModel::Decomposed, 8);
  base.init_opacity = 0.5;

  SUBCASE("zero gradients only prune") {
    GaussianCloud c = init_cloud(base);
    c.opacity_logits[2] = std::log(1e-4f / (1 - 1e-4f));
    DensityStats st;
    st.reset(c.size());
    const auto r = densify_and_prune(c, st, cfg, rng);
    CHECK(c.size() == 7);
    CHECK(r.pruned == 1);
    CHECK(r.cloned == 0);
    CHECK(r.split == 0);
    REQUIRE(r.source.size() == 7);
    CHECK(r.source[2] == 3);
  }
  SUBCASE("small Gaussian above threshold is cloned") {
    GaussianCloud c = init_cloud(base);
    for (float& s : c.log_scales) s = std::log(1e-3f);
    DensityStats st;
    st.reset(c.size());
    st.grad_sum[4] = 1.0;
    st.visible[4] = 1;
    const auto r = densify_and_prune(c, st, cfg, rng);
    CHECK(c.size() == 9);
    CHECK(r.cloned == 1);
    CHECK(r.source.back() == -1);
    CHECK(c.position(8) == c.position(4));
  }
  SUBCASE("large Gaussian is split into two smaller children") {
    GaussianCloud c = init_cloud(base);
    for (float& s : c.log_scales) s = 0.0f;
    DensityStats st;
    st.reset(c.size());
    st.grad_sum[0] = 1.0;
    st.visible[0] = 2;
    const auto r = densify_and_prune(c, st, cfg, rng);
    CHECK(r.split == 1);
    CHECK(c.size() == 9);
    for (size_t i = 7; i < 9; ++i) {
      CHECK(std::exp(double(c.log_scales[3 * i])) == doctest::Approx(1.0 / 1.6).epsilon(1e-6));
    }
  }
  SUBCASE("count cap") {
    GaussianCloud c = init_cloud(base);
    for (float& s : c.log_scales) s = std::log(1e-3f);
    cfg.max_gaussians = 10;
    DensityStats st;
    st.reset(c.size());
    for (size_t i = 0; i < c.size(); ++i) {
      st.grad_sum[i] = 1.0;
      st.visible[i] = 1;
    }
    densify_and_prune(c, st, cfg, rng);
    CHECK(c.size() == 10);
  }
  SUBCASE("disabled is a no-op") {
    cfg.enabled = false;
    GaussianCloud c = init_cloud(base);
    c.opacity_logits[0] = -20.0f;
    const GaussianCloud expect = c;
    DensityStats st;
    st.reset(c.size());
    densify_and_prune(c, st, cfg, rng);
    CHECK(c == expect);
  }
}

TEST_CASE("pruning keeps every Gaussian at or above the opacity threshold") {
  AdcConfig cfg;
  cfg.enabled = true;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(-8.0f, 2.0f);
  auto o = small_init(ColorModel::Entangled, 200);
  GaussianCloud c = init_cloud(o);
  for (float& l : c.opacity_logits) l = u(rng);
  size_t above = 0;
  for (size_t i = 0; i < c.size(); ++i) above += c.opacity(i) >= cfg.min_opacity;
  DensityStats st;
  st.reset(c.size());
  densify_and_prune(c, st, cfg, rng);
  CHECK(c.size() == above);
}
