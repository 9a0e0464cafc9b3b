#include <doctest.h>

#include <cmath>

#include "nhsplat/data_io.hpp"
#include "nhsplat/error.hpp"
#include "nhsplat/optim.hpp"
#include "nhsplat/photometry.hpp"
#include "nhsplat/rasterizer.hpp"
#include "test_util.hpp"

using namespace nhsplat;

namespace {

GaussianCloud unit_cloud(size_t n = 4) {
  InitOptions o;
  o.count = n;
  o.seed = 5;
  o.sh_degree = 1;
  o.init_luminance = 0.5;
  return init_cloud(o);
}

CloudGradients grads_like(const GaussianCloud& c, float fill) {
  CloudGradients g;
  g.resize_for(c);
  for (auto* v : {&g.positions, &g.log_scales, &g.rotations, &g.opacity_logits, &g.luminance, &g.sh})
    v->assign(v->size(), fill);
  return g;
}

const Dataset& small_dataset() {
  static const Dataset data = [] {
    SceneSpec s;
    s.gaussian_count = 16;
    s.camera_count = 10;
    s.width = 32;
    s.height = 32;
    return synthesize_dataset(s, Supervision::HdrRgb).dataset;
  }();
  return data;
}

TrainConfig quick_config(int iters) {
  TrainConfig cfg;
  cfg.iterations = iters;
  cfg.num_gaussians = 64;
  cfg.log_every = 5;
  return cfg;
}

std::vector<std::string> log_lines(const TrainResult& r) {
  std::vector<std::string> out;
  for (const auto& m : r.log) out.push_back(m.to_json(false));
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  LearningRates lr;
  CHECK(lr.position_at(0, 1000) == doctest::Approx(1.6e-4));
  CHECK(lr.position_at(1000, 1000) == doctest::Approx(1.6e-6));
  CHECK(lr.position_at(500, 1000) == doctest::Approx(1.6e-5));
  const auto all = lr.at(0, 10);
  CHECK(all[1] == 5e-3);
  CHECK(all[2] == 1e-3);
  CHECK(all[3] == 5e-2);
  CHECK(all[4] == 2.5e-3);
  CHECK(all[5] == 5e-2);
}

TEST_CASE("adam update rules") {
  const LearningRates lr;
  const auto rates = lr.at(0, 100);

  SUBCASE("zero gradient leaves parameters unchanged") {
    GaussianCloud c = unit_cloud();
    const GaussianCloud before = c;
    AdamState st;
    st.reset_for(c);
    adam_step(c, grads_like(c, 0.0f), st, rates);
    CHECK(c == before);
    CHECK(st.t == 1);
  }
  SUBCASE("first step moves every parameter by lr against the gradient sign") {
    GaussianCloud c = unit_cloud();
    const GaussianCloud before = c;
    AdamState st;
    st.reset_for(c);
    CloudGradients g = grads_like(c, 0.0f);
    g.opacity_logits = {0.3f, -2.0f, 1e-6f, -7.0f};
    g.luminance = {1.0f, -1.0f, 0.5f, -0.5f};
    g.positions[0] = 4.0f;
    adam_step(c, g, st, rates);
    for (size_t i = 0; i < 4; ++i) {
      const double sign_o = g.opacity_logits[i] > 0 ? 1.0 : -1.0;
      CHECK(double(c.opacity_logits[i]) - before.opacity_logits[i] ==
            doctest::Approx(-5e-2 * sign_o).epsilon(1e-5));
      const double sign_l = g.luminance[i] > 0 ? 1.0 : -1.0;
      CHECK(double(c.luminance[i]) - before.luminance[i] == doctest::Approx(-5e-2 * sign_l).epsilon(1e-5));
    }
    CHECK(double(c.positions[0]) - before.positions[0] == doctest::Approx(-1.6e-4).epsilon(1e-3));
    CHECK(c.positions[1] == before.positions[1]);
  }
  SUBCASE("deterministic") {
    GaussianCloud a = unit_cloud(), b = unit_cloud();
    AdamState sa, sb;
    sa.reset_for(a);
    sb.reset_for(b);
    for (int k = 0; k < 5; ++k) {
      const auto g = grads_like(a, float(k) - 2.5f);
      adam_step(a, g, sa, rates);
      adam_step(b, g, sb, rates);
    }
    CHECK(a == b);
    CHECK(sa == sb);
  }
  SUBCASE("quaternions stay unit") {
    GaussianCloud c = unit_cloud();
    AdamState st;
    st.reset_for(c);
    auto g = grads_like(c, 0.0f);
    for (size_t i = 0; i < g.rotations.size(); ++i) g.rotations[i] = float(i % 3) - 1.0f;
    for (int k = 0; k < 20; ++k) adam_step(c, g, st, {0, 0, 0.1, 0, 0, 0});
    for (size_t i = 0; i < c.size(); ++i) {
      double n2 = 0.0;
      for (int k = 0; k < 4; ++k) n2 += double(c.rotations[4 * i + k]) * c.rotations[4 * i + k];
      CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("non-finite gradient names the group and leaves the cloud alone") {
    GaussianCloud c = unit_cloud();
    const GaussianCloud before = c;
    AdamState st;
    st.reset_for(c);
    auto g = grads_like(c, 0.1f);
    g.sh[5] = NAN;
    try {
      adam_step(c, g, st, rates);
      FAIL("expected an error");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("'sh'") != std::string::npos);
    }
    CHECK(c == before);
  }
}

TEST_CASE("adam state follows densification") {
  GaussianCloud c = unit_cloud(3);
  AdamState st;
  st.reset_for(c);
  adam_step(c, grads_like(c, 1.0f), st, LearningRates{}.at(0, 10));
  const auto old_m = st.m[3];
  GaussianCloud grown = c;
  grown.gather(std::vector<size_t>{2, 0, 0, 1});
  st.remap(grown, {2, 0, -1, 1});
  CHECK(st.m[3][0] == old_m[2]);
  CHECK(st.m[3][1] == old_m[0]);
  CHECK(st.m[3][2] == 0.0);
  CHECK(st.v[3][2] == 0.0);
  CHECK(st.m[3][3] == old_m[1]);
  CHECK(st.m[0].size() == 12);
}

TEST_CASE("train config json") {
  TrainConfig cfg;
  cfg.iterations = 123;
  cfg.loss.lambda = 0.35;
  cfg.lr.luminance = 0.01;
  cfg.color_model = ColorModel::Entangled;
  cfg.supervision = Supervision::BayerRaw;
  cfg.bayer_pattern = BayerPattern::GRBG;
  cfg.adc.enabled = true;
  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.resolved_luminance_space() == LuminanceSpace::Linear);
  CHECK(TrainConfig{}.resolved_luminance_space() == LuminanceSpace::Log);

  const TrainConfig partial = TrainConfig::from_json(R"({"iterations": 9, "loss": {"lambda": 0.5}})");
  CHECK(partial.iterations == 9);
  CHECK(partial.loss.lambda == 0.5);
  CHECK(partial.loss.mu == 5000.0);

  CHECK_THROWS_AS(TrainConfig::from_json(R"({"iteration": 9})"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"loss": {"lamda": 0.5}})"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"loss": {"lambda": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"iterations": -1})"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json("{"), ConfigError);
}

TEST_CASE("zero iterations return the initial cloud") {
  const Dataset& data = small_dataset();
  const TrainConfig cfg = quick_config(0);
  const auto r = train(data, cfg);
  CHECK(r.cloud == initial_cloud(data, cfg));
  CHECK(r.log.empty());
  CHECK(r.losses.empty());
}

TEST_CASE("training is reproducible and lowers the loss") {
  const Dataset& data = small_dataset();
  TrainConfig cfg = quick_config(300);
  const auto a = train(data, cfg);
  cfg.threads = 3;
  const auto b = train(data, cfg);
  CHECK(a.cloud == b.cloud);
  CHECK(log_lines(a) == log_lines(b));
  REQUIRE(a.log.size() == 60);
  CHECK(a.log.back().iter == 300);

  const std::vector<double> early(a.losses.begin(), a.losses.begin() + 30);
  const std::vector<double> late(a.losses.begin() + 150, a.losses.end());
  CHECK(median(late) < median(early));

  cfg.seed = 1;
  const auto c = train(data, cfg);
  CHECK(!(c.cloud == a.cloud));
}

TEST_CASE("train validates its inputs") {
  const Dataset& data = small_dataset();
  TrainConfig cfg = quick_config(1);
  cfg.supervision = Supervision::BayerRaw;
  CHECK_THROWS_AS(train(data, cfg), ConfigError);
  cfg = quick_config(1);
  GaussianCloud wrong = initial_cloud(data, cfg);
  wrong.color_model = ColorModel::Entangled;
  CHECK_THROWS_AS(train(data, cfg, wrong), ConfigError);

  // A poisoned cloud stops with the iteration and the view named.
  GaussianCloud bad = initial_cloud(data, cfg);
  bad.luminance.assign(bad.luminance.size(), 1e30f);
  bad.log_scales.assign(bad.log_scales.size(), 1.0f);
  bad.opacity_logits.assign(bad.opacity_logits.size(), 10.0f);
  try {
    train(data, cfg, bad);
    FAIL("expected an error");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("view r_") != std::string::npos);
  }
}

TEST_CASE("median") {
  CHECK(median({3.0}) == 3.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK_THROWS_AS(median({}), InvalidArgument);
}

TEST_CASE("evaluating the ground truth") {
  SceneSpec s;
  s.gaussian_count = 16;
  s.camera_count = 10;
  s.width = 32;
  s.height = 32;
  const auto hdr = synthesize_dataset(s, Supervision::HdrRgb);
  const auto res = evaluate(hdr.ground_truth, hdr.dataset, "test", RenderSettings{});
  REQUIRE(res.views.size() == 2);
  double mean = 0.0;
  for (const auto& v : res.views) {
    CHECK(v.mu_psnr > 80.0);
    CHECK(v.ssim == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(!v.raw_psnr);
    mean += v.mu_psnr / 2.0;
  }
  CHECK(std::abs(res.mean.mu_psnr - mean) < 1e-12);

  // A blank cloud scores far lower, and the per-view mean still holds.
  GaussianCloud blank = hdr.ground_truth;
  blank.opacity_logits.assign(blank.size(), -30.0f);
  const auto low = evaluate(blank, hdr.dataset, "train", RenderSettings{});
  double m2 = 0.0;
  for (const auto& v : low.views) m2 += v.psnr;
  CHECK(std::abs(low.mean.psnr - m2 / double(low.views.size())) < 1e-12);
  CHECK(low.mean.mu_psnr < 30.0);

  const auto raw = synthesize_dataset(s, Supervision::BayerRaw);
  const auto rr = evaluate(raw.ground_truth, raw.dataset, "test", RenderSettings{});
  for (const auto& v : rr.views) {
    REQUIRE(v.raw_psnr);
    CHECK(*v.raw_psnr > 45.0);  // GT mosaic is quantized to 14 bits
  }
  const View& v0 = raw.dataset.test[0];
  const HdrImage pred = render(raw.ground_truth, v0.camera, RenderSettings{}).image;
  CHECK(*rr.views[0].raw_psnr ==
        doctest::Approx(psnr(bayer_mask(pred, v0.raw.pattern).mosaic, v0.raw.mosaic, PsnrDomain::MuLaw)));
  CHECK(rr.views[0].mu_psnr == doctest::Approx(psnr(pred, demosaic_bilinear(v0.raw), PsnrDomain::MuLaw)));
}

// Two side-by-side opaque Gaussians at radiance 1e-2 and 1e2, both rendered
// at twice their target. Compares how much of the learning signal reaches the
// dim one relative to the bright one.
TEST_CASE("dim regions receive a proportionate learning signal") {
  const Camera cam = test::front_camera(48, 32, 30.0);
  const double target[2] = {1e-2, 1e2};
  auto make = [&](ColorModel model, LuminanceSpace space, double factor) {
    GaussianCloud c(model, 0, space, Box{});
    for (int i = 0; i < 2; ++i) {
      Gaussian g;
      g.position = {i == 0 ? -0.9 : 0.9, 0.0, 0.0};
      g.log_scale.setConstant(std::log(0.25));
      g.opacity_logit = 8.0;
      const double rad = target[i] * factor;
      if (model == ColorModel::Entangled) {
        g.sh.assign(3, (rad - 0.5) / kShC0);  // baseline offset of 0.5
      } else {
        g.sh.assign(3, 20.0);                 // sigmoid ~ 1
        g.luminance_raw = space == LuminanceSpace::Log ? std::log(rad) : rad;
      }
      c.push_back(g);
    }
    return c;
  };
  auto ratio = [](const std::vector<float>& g, size_t stride) {
    double d = 0.0, b = 0.0;
    for (size_t k = 0; k < stride; ++k) {
      d += std::abs(double(g[k]));
      b += std::abs(double(g[stride + k]));
    }
    return d / b;
  };
  const RenderSettings rs;

  const GaussianCloud e_pred = make(ColorModel::Entangled, LuminanceSpace::Log, 2.0);
  const GaussianCloud e_gt = make(ColorModel::Entangled, LuminanceSpace::Log, 1.0);
  const HdrImage gt = render(e_gt, cam, rs).image;
  const HdrImage ep = render(e_pred, cam, rs).image;
  Image up(ep.width, ep.height, 3);
  const double inv_n = 1.0 / double(up.data.size());
  for (size_t i = 0; i < up.data.size(); ++i) {
    const double d = double(ep.data[i]) - gt.data[i];
    up.data[i] = float(d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0));
  }
  const double entangled = ratio(render_backward(e_pred, cam, rs, up).sh, 3);

  double decomposed[2];
  for (auto space : {LuminanceSpace::Linear, LuminanceSpace::Log}) {
    const GaussianCloud d_pred = make(ColorModel::Decomposed, space, 2.0);
    const HdrImage dp = render(d_pred, cam, rs).image;
    const auto lr = combined_loss(dp, gt);
    decomposed[int(space == LuminanceSpace::Log)] = ratio(render_backward(d_pred, cam, rs, lr.grad).luminance, 1);
  }
  MESSAGE("dim/bright gradient ratio: entangled+linear L1 " << entangled
          << ", decomposed+mu-law (linear Lum) " << decomposed[0]
          << ", decomposed+mu-law (log Lum) " << decomposed[1]);
  CHECK(decomposed[0] > entangled);
  CHECK(decomposed[1] > entangled);
}
