#include "nhsplat/types.hpp"

#include <cmath>
#include <string>

#include "nhsplat/error.hpp"

namespace nhsplat {

std::string_view to_string(ColorModel m) {
  return m == ColorModel::Entangled ? "entangled" : "decomposed";
}

std::string_view to_string(LuminanceSpace s) { return s == LuminanceSpace::Log ? "log" : "linear"; }

ColorModel parse_color_model(std::string_view s) {
  if (s == "entangled") return ColorModel::Entangled;
  if (s == "decomposed") return ColorModel::Decomposed;
  throw ConfigError("unknown color model '" + std::string(s) + "' (expected entangled|decomposed)");
}

LuminanceSpace parse_luminance_space(std::string_view s) {
  if (s == "log") return LuminanceSpace::Log;
  if (s == "linear") return LuminanceSpace::Linear;
  throw ConfigError("unknown luminance space '" + std::string(s) + "' (expected log|linear)");
}

double Box::diagonal() const {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (hi[i] - lo[i]) * (hi[i] - lo[i]);
  return std::sqrt(s);
}

}  // namespace nhsplat
