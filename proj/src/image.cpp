#include "nhsplat/image.hpp"

#include <string>

#include "nhsplat/error.hpp"

namespace nhsplat {

std::string_view to_string(BayerPattern p) {
  switch (p) {
    case BayerPattern::RGGB: return "RGGB";
    case BayerPattern::BGGR: return "BGGR";
    case BayerPattern::GRBG: return "GRBG";
    case BayerPattern::GBRG: return "GBRG";
  }
  return "?";
}

BayerPattern parse_bayer_pattern(std::string_view s) {
  if (s == "RGGB") return BayerPattern::RGGB;
  if (s == "BGGR") return BayerPattern::BGGR;
  if (s == "GRBG") return BayerPattern::GRBG;
  if (s == "GBRG") return BayerPattern::GBRG;
  throw FormatError("unknown bayer pattern '" + std::string(s) + "'");
}

int bayer_channel(BayerPattern p, int y, int x) {
  // 2x2 cell layouts, row-major: [y%2][x%2]
  static constexpr int kLayouts[4][2][2] = {
      {{0, 1}, {1, 2}},  // RGGB
      {{2, 1}, {1, 0}},  // BGGR
      {{1, 0}, {2, 1}},  // GRBG
      {{1, 2}, {0, 1}},  // GBRG
  };
  return kLayouts[int(p)][y & 1][x & 1];
}

}  // namespace nhsplat
