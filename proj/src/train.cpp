#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "nhsplat/error.hpp"
#include "nhsplat/optim.hpp"
#include "nhsplat/parallel.hpp"

namespace nhsplat {

using json = nlohmann::json;

std::string MetricsRecord::to_json(bool with_wall_time) const {
  json j = {{"iter", iter},        {"loss", loss},         {"l1", l1},
            {"ssim_loss", ssim_loss}, {"mu_psnr", mu_psnr}, {"n_gaussians", n_gaussians}};
  if (with_wall_time) j["wall_ms"] = wall_ms;
  return j.dump();
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty range");
  const size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + long(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + long(mid));
  return 0.5 * (lo + hi);
}

RenderSettings render_settings(const TrainConfig& cfg) {
  RenderSettings s;
  s.background = cfg.background;
  s.baseline_offset = cfg.baseline_offset;
  s.threads = cfg.threads;
  return s;
}

double mean_luminance(const Dataset& data) {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& v : data.train) {
    const auto& px = data.supervision == Supervision::HdrRgb ? v.hdr.data : v.raw.mosaic.data;
    for (float x : px) sum += x;
    n += px.size();
  }
  return n ? sum / double(n) : 0.0;
}

GaussianCloud initial_cloud(const Dataset& data, const TrainConfig& cfg) {
  InitOptions o;
  o.count = cfg.num_gaussians;
  o.bounds = data.bounds;
  o.seed = cfg.seed;
  o.color_model = cfg.color_model;
  o.sh_degree = cfg.sh_degree;
  o.luminance_space = cfg.resolved_luminance_space();
  if (cfg.init_luminance) {
    o.init_luminance = *cfg.init_luminance;
  } else {
    const double mean = mean_luminance(data);
    o.init_luminance = mean > 0.0 ? 2.0 * mean : 1.0;
  }
  o.baseline_offset = cfg.baseline_offset;
  o.init_opacity = cfg.init_opacity;
  o.points = data.points;
  return init_cloud(o);
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, const TrainCallbacks& cb) {
  cfg.validate();
  return train(data, cfg, initial_cloud(data, cfg), cb);
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, GaussianCloud cloud,
                  const TrainCallbacks& cb) {
  cfg.validate();
  data.validate();
  if (data.train.size() < 2) throw ConfigError("training needs at least 2 posed views");
  if (data.supervision != cfg.supervision) {
    throw ConfigError("config expects " + std::string(to_string(cfg.supervision)) +
                      " supervision but the dataset is " +
                      std::string(to_string(data.supervision)));
  }
  if (cloud.color_model != cfg.color_model || cloud.sh_degree != cfg.sh_degree) {
    throw ConfigError("initial cloud does not match the configured color model or sh degree");
  }
  if (cfg.bayer_pattern && data.supervision == Supervision::BayerRaw) {
    for (const auto& v : data.train) {
      if (v.raw.pattern != *cfg.bayer_pattern) {
        throw ConfigError("bayer pattern mismatch: configured " +
                          std::string(to_string(*cfg.bayer_pattern)) + " but view " + v.name +
                          " is " + std::string(to_string(v.raw.pattern)));
      }
    }
  }

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  TrainResult res;
  AdamState adam;
  adam.reset_for(cloud);
  DensityStats stats;
  stats.reset(cloud.size());
  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 adc_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
  std::vector<size_t> order(data.train.size());
  size_t cursor = order.size();
  RenderSettings rs = render_settings(cfg);
  const int adc_stop = int(cfg.adc.stop_fraction * cfg.iterations);

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), size_t(0));
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const View& view = data.train[order[cursor++]];
    rs.active_sh_degree =
        cfg.sh_warmup ? std::min(cfg.sh_degree, it / cfg.sh_warmup_interval) : -1;

    const RenderOutput out = render(cloud, view.camera, rs);
    if (!std::all_of(out.image.data.begin(), out.image.data.end(),
                     [](float v) { return std::isfinite(v); })) {
      throw NumericalError("non-finite render at iteration " + std::to_string(it) + " on view " +
                           view.name);
    }
    LossResult lr;
    double mu_psnr;
    if (data.supervision == Supervision::HdrRgb) {
      lr = combined_loss(out.image, view.hdr, cfg.loss);
      mu_psnr = psnr(out.image, view.hdr, PsnrDomain::MuLaw, cfg.loss.mu);
    } else {
      lr = bayer_combined_loss(out.image, view.raw, cfg.loss, cfg.bayer_pattern);
      mu_psnr = psnr(bayer_mask(out.image, view.raw.pattern).mosaic, view.raw.mosaic,
                     PsnrDomain::MuLaw, cfg.loss.mu);
    }
    if (!std::isfinite(lr.loss)) {
      throw NumericalError("non-finite loss at iteration " + std::to_string(it) + " on view " +
                           view.name);
    }
    res.losses.push_back(lr.loss);

    const CloudGradients grads = render_backward(cloud, view.camera, rs, lr.grad);
    try {
      adam_step(cloud, grads, adam, cfg.lr.at(it, cfg.iterations), cfg.adam);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at iteration " + std::to_string(it) +
                           " on view " + view.name);
    }

    if (cfg.adc.enabled && it < adc_stop) {
      stats.add(grads.mean2d_norm, grads.visible);
      if (it + 1 >= cfg.adc.start_iter && (it + 1) % cfg.adc.interval == 0) {
        const DensifyResult d = densify_and_prune(cloud, stats, cfg.adc, adc_rng);
        adam.remap(cloud, d.source);
        stats.reset(cloud.size());
      }
    }

    if ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations) {
      MetricsRecord r;
      r.iter = it + 1;
      r.loss = lr.loss;
      r.l1 = lr.l1;
      r.ssim_loss = lr.ssim_loss;
      r.mu_psnr = mu_psnr;
      r.n_gaussians = cloud.size();
      r.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      res.log.push_back(r);
      if (cb.on_log) cb.on_log(r);
    }
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && cb.on_checkpoint) {
      cb.on_checkpoint(it + 1, cloud);
    }
  }
  res.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  res.cloud = std::move(cloud);
  return res;
}

std::string EvalResult::to_json() const {
  auto row = [](const ViewMetrics& m) {
    json j = {{"name", m.name}, {"mu_psnr", m.mu_psnr}, {"psnr", m.psnr}, {"ssim", m.ssim}};
    if (m.raw_psnr) j["raw_psnr"] = *m.raw_psnr;
    return j;
  };
  json j;
  j["split"] = split;
  j["views"] = json::array();
  for (const auto& v : views) j["views"].push_back(row(v));
  j["mean"] = row(mean);
  j["mean"].erase("name");
  return j.dump(2) + "\n";
}

std::string EvalResult::table() const {
  const bool raw = mean.raw_psnr.has_value();
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %8s%s\n", "view", "mu-PSNR", "PSNR", "SSIM",
                raw ? "  RAW-PSNR" : "");
  out += buf;
  auto line = [&](const ViewMetrics& m, const std::string& name) {
    std::snprintf(buf, sizeof buf, "%-10s %9.3f %9.3f %8.5f", name.c_str(), m.mu_psnr, m.psnr,
                  m.ssim);
    out += buf;
    if (m.raw_psnr) {
      std::snprintf(buf, sizeof buf, " %9.3f", *m.raw_psnr);
      out += buf;
    }
    out += "\n";
  };
  for (const auto& v : views) line(v, v.name);
  line(mean, "mean");
  return out;
}

EvalResult evaluate(const GaussianCloud& cloud, const Dataset& data, std::string_view split,
                    const RenderSettings& settings, double mu) {
  const auto& views = data.split(split);
  if (views.empty()) throw ConfigError("split '" + std::string(split) + "' is empty");
  EvalResult res;
  res.split = std::string(split);
  res.views.resize(views.size());
  RenderSettings rs = settings;
  rs.threads = 1;
  LossConfig lc;
  lc.mu = mu;
  parallel_for(views.size(), settings.threads, [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      const View& v = views[i];
      const HdrImage pred = render(cloud, v.camera, rs).image;
      ViewMetrics& m = res.views[i];
      m.name = v.name;
      HdrImage gt;
      if (data.supervision == Supervision::HdrRgb) {
        gt = v.hdr;
      } else {
        gt = demosaic_bilinear(v.raw);
        m.raw_psnr = psnr(bayer_mask(pred, v.raw.pattern).mosaic, v.raw.mosaic,
                          PsnrDomain::MuLaw, mu);
      }
      m.mu_psnr = psnr(pred, gt, PsnrDomain::MuLaw, mu);
      m.psnr = psnr(pred, gt, PsnrDomain::Linear);
      m.ssim = ssim(mu_law(pred, mu), mu_law(gt, mu), lc);
    }
  });
  res.mean.name = "mean";
  double raw_sum = 0.0;
  for (const auto& m : res.views) {
    res.mean.mu_psnr += m.mu_psnr;
    res.mean.psnr += m.psnr;
    res.mean.ssim += m.ssim;
    if (m.raw_psnr) raw_sum += *m.raw_psnr;
  }
  const double n = double(res.views.size());
  res.mean.mu_psnr /= n;
  res.mean.psnr /= n;
  res.mean.ssim /= n;
  if (data.supervision == Supervision::BayerRaw) res.mean.raw_psnr = raw_sum / n;
  return res;
}

}  // namespace nhsplat
