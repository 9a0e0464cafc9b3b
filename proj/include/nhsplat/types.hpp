#pragma once

#include <array>
#include <string>
#include <string_view>

namespace nhsplat {

enum class ColorModel { Entangled, Decomposed };
enum class LuminanceSpace { Log, Linear };

std::string_view to_string(ColorModel m);
std::string_view to_string(LuminanceSpace s);
ColorModel parse_color_model(std::string_view s);
LuminanceSpace parse_luminance_space(std::string_view s);

/// Axis-aligned box in world units.
struct Box {
  std::array<double, 3> lo{-1.0, -1.0, -1.0};
  std::array<double, 3> hi{1.0, 1.0, 1.0};

  bool degenerate() const {
    for (int i = 0; i < 3; ++i) {
      if (!(hi[i] > lo[i])) return true;
    }
    return false;
  }
  double diagonal() const;
  bool operator==(const Box&) const = default;
};

}  // namespace nhsplat
