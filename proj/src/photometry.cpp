#include "nhsplat/photometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nhsplat/error.hpp"

namespace nhsplat {
namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(what) + ": shape mismatch (" + std::to_string(a.width) +
                          "x" + std::to_string(a.height) + "x" + std::to_string(a.channels) +
                          " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) +
                          "x" + std::to_string(b.channels) + ")");
  }
}

void require_even(int w, int h, const char* what) {
  if (w % 2 != 0 || h % 2 != 0) {
    throw InvalidArgument(std::string(what) + ": dimensions must be even, got " +
                          std::to_string(w) + "x" + std::to_string(h));
  }
}

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

// Separable normalized Gaussian window with reflect padding, on one plane.
class GaussianFilter {
 public:
  GaussianFilter(int window, double sigma) : radius_(window / 2), w_(window) {
    double sum = 0.0;
    for (int k = 0; k < window; ++k) {
      const double d = k - radius_;
      w_[k] = std::exp(-d * d / (2.0 * sigma * sigma));
      sum += w_[k];
    }
    for (double& v : w_) v /= sum;
  }

  std::vector<double> apply(const std::vector<double>& in, int w, int h) const {
    std::vector<double> tmp(in.size()), out(in.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -radius_; k <= radius_; ++k) s += w_[k + radius_] * in[y * w + reflect(x + k, w)];
        tmp[y * w + x] = s;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -radius_; k <= radius_; ++k) s += w_[k + radius_] * tmp[reflect(y + k, h) * w + x];
        out[y * w + x] = s;
      }
    }
    return out;
  }

  // Transpose of apply().
  std::vector<double> adjoint(const std::vector<double>& g, int w, int h) const {
    std::vector<double> tmp(g.size(), 0.0), out(g.size(), 0.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = g[y * w + x];
        for (int k = -radius_; k <= radius_; ++k) tmp[reflect(y + k, h) * w + x] += w_[k + radius_] * v;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = tmp[y * w + x];
        for (int k = -radius_; k <= radius_; ++k) out[y * w + reflect(x + k, w)] += w_[k + radius_] * v;
      }
    }
    return out;
  }

 private:
  int radius_;
  std::vector<double> w_;
};

std::vector<double> plane(const Image& img, int c) {
  std::vector<double> p(img.pixel_count());
  for (size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
  return p;
}

struct SsimPlane {
  double sum = 0.0;
  std::vector<double> grad;
};

// SSIM summed over one plane; gradient of the sum w.r.t. a when requested.
SsimPlane ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int w, int h,
                     const LossConfig& cfg, const GaussianFilter& f, bool want_grad) {
  const size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = f.apply(a, w, h);
  const auto mu_b = f.apply(b, w, h);
  const auto m_aa = f.apply(aa, w, h);
  const auto m_bb = f.apply(bb, w, h);
  const auto m_ab = f.apply(ab, w, h);
  const double c1 = std::pow(cfg.ssim_k1 * cfg.ssim_dynamic_range, 2);
  const double c2 = std::pow(cfg.ssim_k2 * cfg.ssim_dynamic_range, 2);

  SsimPlane out;
  std::vector<double> g_mu, g_r, g_aa;
  if (want_grad) {
    g_mu.resize(n);
    g_r.resize(n);
    g_aa.resize(n);
  }
  for (size_t i = 0; i < n; ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double var_a = m_aa[i] - ma * ma;
    const double var_b = m_bb[i] - mb * mb;
    const double cov = m_ab[i] - ma * mb;
    const double a1 = 2.0 * (ma * mb) + c1;
    const double a2 = 2.0 * cov + c2;
    const double b1 = (ma * ma + mb * mb) + c1;
    const double b2 = (var_a + var_b) + c2;
    const double p = b1 * b2;
    const double s = a1 * a2 / p;
    out.sum += s;
    if (want_grad) {
      // Arranged so that every term cancels exactly when a == b.
      const double r = a1 / p;
      g_mu[i] = 2.0 / p * (mb * (a2 - a1) - ma * s * (b2 - b1));
      g_r[i] = r;
      g_aa[i] = -r * (a2 / b2);
    }
  }
  if (want_grad) {
    const auto t_mu = f.adjoint(g_mu, w, h);
    const auto t_r = f.adjoint(g_r, w, h);
    const auto t_aa = f.adjoint(g_aa, w, h);
    out.grad.resize(n);
    for (size_t i = 0; i < n; ++i) {
      out.grad[i] = t_mu[i] + 2.0 * a[i] * t_aa[i] + b[i] * (2.0 * t_r[i]);
    }
  }
  return out;
}

SsimResult ssim_impl(const Image& a, const Image& b, const LossConfig& cfg, bool want_grad) {
  require_same_shape(a, b, "ssim");
  if (a.width < cfg.ssim_window || a.height < cfg.ssim_window) {
    throw InvalidArgument("ssim: image " + std::to_string(a.width) + "x" +
                          std::to_string(a.height) + " is smaller than the " +
                          std::to_string(cfg.ssim_window) + "px window");
  }
  const GaussianFilter f(cfg.ssim_window, cfg.ssim_sigma);
  SsimResult res;
  if (want_grad) res.grad_a = Image(a.width, a.height, a.channels);
  const double count = double(a.pixel_count()) * a.channels;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    const auto p = ssim_plane(plane(a, c), plane(b, c), a.width, a.height, cfg, f, want_grad);
    total += p.sum;
    if (want_grad) {
      for (size_t i = 0; i < p.grad.size(); ++i) {
        res.grad_a.data[i * a.channels + c] = float(p.grad[i] / count);
      }
    }
  }
  res.value = total / count;
  return res;
}

// Sign-based L1 gradient with sign(0) = 0.
double l1_grad(double d, double inv_n) { return d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0); }

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
  if (!(mu > 0.0)) throw ConfigError("mu must be positive");
  if (ssim_window < 3 || ssim_window % 2 == 0) throw ConfigError("ssim window must be odd and >= 3");
  if (!(ssim_sigma > 0.0)) throw ConfigError("ssim sigma must be positive");
}

double mu_law(double x, double mu) { return std::log1p(mu * x) / std::log1p(mu); }

double mu_law_derivative(double x, double mu) { return mu / ((1.0 + mu * x) * std::log1p(mu)); }

Image mu_law(const Image& img, double mu) {
  if (!(mu > 0.0)) throw InvalidArgument("mu_law: mu must be positive");
  Image out(img.width, img.height, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double v = img.data[i];
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("mu_law: radiance must be finite and non-negative, got " +
                            std::to_string(v));
    }
    out.data[i] = float(mu_law(v, mu));
  }
  return out;
}

Image mu_law_derivative(const Image& img, double mu) {
  Image out(img.width, img.height, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = float(mu_law_derivative(img.data[i], mu));
  return out;
}

double l1_loss(const Image& a, const Image& b) {
  require_same_shape(a, b, "l1_loss");
  if (a.data.empty()) return 0.0;
  // Neumaier summation
  double sum = 0.0, comp = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double v = std::abs(double(a.data[i]) - double(b.data[i]));
    const double t = sum + v;
    comp += std::abs(sum) >= v ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return (sum + comp) / double(a.data.size());
}

double ssim(const Image& a, const Image& b, const LossConfig& cfg) {
  return ssim_impl(a, b, cfg, false).value;
}

SsimResult ssim_with_gradient(const Image& a, const Image& b, const LossConfig& cfg) {
  return ssim_impl(a, b, cfg, true);
}

LossResult combined_loss(const HdrImage& pred, const HdrImage& gt, const LossConfig& cfg) {
  require_same_shape(pred, gt, "combined_loss");
  const Image cp = mu_law(pred, cfg.mu);
  const Image cg = mu_law(gt, cfg.mu);
  LossResult r;
  r.l1 = l1_loss(cp, cg);
  const SsimResult s = ssim_with_gradient(cp, cg, cfg);
  r.ssim_loss = 1.0 - s.value;
  r.loss = cfg.lambda * r.l1 + (1.0 - cfg.lambda) * r.ssim_loss;

  r.grad = Image(pred.width, pred.height, pred.channels);
  const double inv_n = 1.0 / double(pred.data.size());
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double d_comp = cfg.lambda * l1_grad(double(cp.data[i]) - double(cg.data[i]), inv_n) -
                          (1.0 - cfg.lambda) * double(s.grad_a.data[i]);
    r.grad.data[i] = float(d_comp * mu_law_derivative(pred.data[i], cfg.mu));
  }
  return r;
}

BayerImage bayer_mask(const HdrImage& rgb, BayerPattern pattern) {
  if (rgb.channels != 3) throw InvalidArgument("bayer_mask: expected a 3-channel image");
  require_even(rgb.width, rgb.height, "bayer_mask");
  BayerImage out;
  out.pattern = pattern;
  out.mosaic = Image(rgb.width, rgb.height, 1);
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      out.mosaic.at(y, x) = rgb.at(y, x, bayer_channel(pattern, y, x));
    }
  }
  return out;
}

Image bayer_channel_mask(int width, int height, BayerPattern pattern, int channel) {
  Image m(width, height, 1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) m.at(y, x) = bayer_channel(pattern, y, x) == channel ? 1.f : 0.f;
  }
  return m;
}

std::array<Image, 4> bayer_subimages(const Image& mosaic) {
  if (mosaic.channels != 1) throw InvalidArgument("bayer_subimages: expected a 1-channel mosaic");
  require_even(mosaic.width, mosaic.height, "bayer_subimages");
  std::array<Image, 4> subs;
  const int w = mosaic.width / 2, h = mosaic.height / 2;
  for (int phase = 0; phase < 4; ++phase) {
    const int py = phase / 2, px = phase % 2;
    subs[phase] = Image(w, h, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) subs[phase].at(y, x) = mosaic.at(2 * y + py, 2 * x + px);
    }
  }
  return subs;
}

double bayer_ssim_loss(const Image& pred, const Image& gt, const LossConfig& cfg) {
  require_same_shape(pred, gt, "bayer_ssim_loss");
  const auto sp = bayer_subimages(pred);
  const auto sg = bayer_subimages(gt);
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) sum += ssim(sp[i], sg[i], cfg);
  return 1.0 - 0.25 * sum;
}

LossResult bayer_combined_loss(const HdrImage& pred_rgb, const BayerImage& gt,
                               const LossConfig& cfg, std::optional<BayerPattern> expected) {
  if (expected && *expected != gt.pattern) {
    throw ConfigError("bayer pattern mismatch: configured " + std::string(to_string(*expected)) +
                      " but ground truth is " + std::string(to_string(gt.pattern)));
  }
  if (pred_rgb.width != gt.width() || pred_rgb.height != gt.height()) {
    throw InvalidArgument("bayer_combined_loss: prediction and mosaic sizes differ");
  }
  const BayerImage pm = bayer_mask(pred_rgb, gt.pattern);
  const Image cp = mu_law(pm.mosaic, cfg.mu);
  const Image cg = mu_law(gt.mosaic, cfg.mu);

  LossResult r;
  r.l1 = l1_loss(cp, cg);
  const auto sp = bayer_subimages(cp);
  const auto sg = bayer_subimages(cg);
  Image ssim_grad(cp.width, cp.height, 1);
  double ssim_sum = 0.0;
  for (int phase = 0; phase < 4; ++phase) {
    const SsimResult s = ssim_with_gradient(sp[phase], sg[phase], cfg);
    ssim_sum += s.value;
    const int py = phase / 2, px = phase % 2;
    for (int y = 0; y < sp[phase].height; ++y) {
      for (int x = 0; x < sp[phase].width; ++x) ssim_grad.at(2 * y + py, 2 * x + px) = s.grad_a.at(y, x);
    }
  }
  r.ssim_loss = 1.0 - 0.25 * ssim_sum;
  r.loss = cfg.lambda * r.l1 + (1.0 - cfg.lambda) * r.ssim_loss;

  r.grad = Image(pred_rgb.width, pred_rgb.height, 3);
  const double inv_n = 1.0 / double(cp.data.size());
  for (int y = 0; y < cp.height; ++y) {
    for (int x = 0; x < cp.width; ++x) {
      const double d_comp =
          cfg.lambda * l1_grad(double(cp.at(y, x)) - double(cg.at(y, x)), inv_n) -
          (1.0 - cfg.lambda) * 0.25 * double(ssim_grad.at(y, x));
      r.grad.at(y, x, bayer_channel(gt.pattern, y, x)) =
          float(d_comp * mu_law_derivative(pm.mosaic.at(y, x), cfg.mu));
    }
  }
  return r;
}

HdrImage demosaic_bilinear(const BayerImage& bayer) {
  const Image& m = bayer.mosaic;
  if (m.channels != 1) throw InvalidArgument("demosaic_bilinear: expected a 1-channel mosaic");
  require_even(m.width, m.height, "demosaic_bilinear");
  HdrImage out(m.width, m.height, 3);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const int own = bayer_channel(bayer.pattern, y, x);
      for (int c = 0; c < 3; ++c) {
        if (c == own) {
          out.at(y, x, c) = m.at(y, x);
          continue;
        }
        // Nearest same-channel sites in the 3x3 neighborhood. Reflection
        // preserves index parity, so the pattern phase is kept at borders.
        double sum = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (bayer_channel(bayer.pattern, y + dy, x + dx) != c) continue;
            sum += m.at(reflect(y + dy, m.height), reflect(x + dx, m.width));
            ++n;
          }
        }
        out.at(y, x, c) = float(sum / n);
      }
    }
  }
  return out;
}

double psnr(const Image& pred, const Image& gt, PsnrDomain domain, double mu) {
  require_same_shape(pred, gt, "psnr");
  if (pred.data.empty()) throw InvalidArgument("psnr: empty images");
  double peak = 1.0;
  double se = 0.0;
  if (domain == PsnrDomain::MuLaw) {
    for (size_t i = 0; i < pred.data.size(); ++i) {
      const double d = mu_law(std::max(0.0, double(pred.data[i])), mu) -
                       mu_law(std::max(0.0, double(gt.data[i])), mu);
      se += d * d;
    }
  } else {
    peak = double(*std::max_element(gt.data.begin(), gt.data.end()));
    if (!(peak > 0.0)) peak = 1.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
      const double d = double(pred.data[i]) - double(gt.data[i]);
      se += d * d;
    }
  }
  const double mse = se / double(pred.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

BasicImage<uint8_t> tonemap_preview(const HdrImage& hdr) {
  BasicImage<uint8_t> out(hdr.width, hdr.height, hdr.channels);
  for (size_t i = 0; i < hdr.data.size(); ++i) {
    const double v = std::max(0.0, double(hdr.data[i]));
    const double t = std::pow(mu_law(v, 5000.0), 1.0 / 2.2);
    out.data[i] = uint8_t(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
  }
  return out;
}

}  // namespace nhsplat
