#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "nhsplat/image.hpp"

namespace nhsplat {

/// Loss weights and SSIM constants.
struct LossConfig {
  double lambda = 0.2;  // weight of the L1 term; SSIM gets 1 - lambda
  double mu = 5000.0;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  double ssim_dynamic_range = 1.0;

  void validate() const;
};

// mu-law range compression: log(1 + mu x) / log(1 + mu).
double mu_law(double x, double mu);
double mu_law_derivative(double x, double mu);
/// Throws InvalidArgument on negative or non-finite input.
Image mu_law(const Image& img, double mu);
Image mu_law_derivative(const Image& img, double mu);

/// Mean absolute difference, compensated summation.
double l1_loss(const Image& a, const Image& b);

/// Mean SSIM over pixels and channels: Gaussian window, reflect padding.
double ssim(const Image& a, const Image& b, const LossConfig& cfg = {});
inline double ssim_loss(const Image& a, const Image& b, const LossConfig& cfg = {}) {
  return 1.0 - ssim(a, b, cfg);
}

struct SsimResult {
  double value = 0.0;
  Image grad_a;  // d(mean SSIM)/da
};
SsimResult ssim_with_gradient(const Image& a, const Image& b, const LossConfig& cfg = {});

struct LossResult {
  double loss = 0.0;
  double l1 = 0.0;
  double ssim_loss = 0.0;
  Image grad;  // dL/d(prediction), same shape as the prediction
};

/// lambda * L1 + (1 - lambda) * (1 - SSIM), both on mu-law compressed images.
LossResult combined_loss(const HdrImage& pred, const HdrImage& gt, const LossConfig& cfg = {});

/// Samples the pattern's channel at every pixel. Requires even dimensions.
BayerImage bayer_mask(const HdrImage& rgb, BayerPattern pattern);
/// Binary mask for one channel (1 where the pattern samples it).
Image bayer_channel_mask(int width, int height, BayerPattern pattern, int channel);

/// Four (H/2 x W/2) phase sub-images; index = 2 * (y % 2) + (x % 2).
std::array<Image, 4> bayer_subimages(const Image& mosaic);

/// 1 - mean of the four phase sub-image SSIMs.
double bayer_ssim_loss(const Image& pred_mosaic, const Image& gt_mosaic,
                       const LossConfig& cfg = {});

/// Masks the prediction with gt's pattern, mu-law compresses both and
/// combines L1 with the Bayer SSIM loss. `expected` guards against a
/// configured pattern that disagrees with the ground-truth metadata.
LossResult bayer_combined_loss(const HdrImage& pred_rgb, const BayerImage& gt,
                               const LossConfig& cfg = {},
                               std::optional<BayerPattern> expected = std::nullopt);

/// Bilinear interpolation of the two missing channels, reflect borders.
HdrImage demosaic_bilinear(const BayerImage& bayer);

enum class PsnrDomain { MuLaw, Linear };
inline constexpr double kPsnrCap = 99.0;

/// MuLaw: both images compressed, peak 1. Linear: peak max(gt). Zero error
/// reports kPsnrCap.
double psnr(const Image& pred, const Image& gt, PsnrDomain domain, double mu = 5000.0);

/// mu-law (mu = 5000), gamma 1/2.2, 8-bit quantization. For previews only.
BasicImage<uint8_t> tonemap_preview(const HdrImage& hdr);

}  // namespace nhsplat
