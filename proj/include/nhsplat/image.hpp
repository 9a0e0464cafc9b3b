#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace nhsplat {

/// Row-major, channel-interleaved raster. Row 0 is the top of the image.
template <class T>
struct BasicImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  BasicImage() = default;
  BasicImage(int w, int h, int c, T fill = T(0))
      : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

  T& at(int y, int x, int c = 0) { return data[(size_t(y) * width + x) * channels + c]; }
  const T& at(int y, int x, int c = 0) const {
    return data[(size_t(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return size_t(width) * height; }
  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  template <class U>
  bool same_shape(const BasicImage<U>& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  template <class U>
  BasicImage<U> cast() const {
    BasicImage<U> out(width, height, channels);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

using Image = BasicImage<float>;
using ImageD = BasicImage<double>;
/// Three-channel linear radiance, non-negative and unbounded above.
using HdrImage = Image;

enum class BayerPattern { RGGB, BGGR, GRBG, GBRG };

std::string_view to_string(BayerPattern p);
BayerPattern parse_bayer_pattern(std::string_view s);

/// Color channel (0=R, 1=G, 2=B) sampled at pixel (y, x).
int bayer_channel(BayerPattern p, int y, int x);

/// Single-channel mosaic with normalized values and the sensor levels used
/// to produce them.
struct BayerImage {
  Image mosaic;  // channels == 1
  BayerPattern pattern = BayerPattern::RGGB;
  double black_level = 0.0;
  double white_level = 1.0;

  int width() const { return mosaic.width; }
  int height() const { return mosaic.height; }
};

}  // namespace nhsplat
