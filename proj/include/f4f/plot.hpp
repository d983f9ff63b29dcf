#pragma once

#include <string>

#include "f4f/diffcore.hpp"

namespace f4f {

struct PlotStyle {
  int panel_size{512};
  int margin{24};
  double extent{4.5};  // data range [-extent, extent] mapped to each panel
  int point_px{2};
};

// Side-by-side input/output scatter. Every input point gets a color derived
// from its position (hue from angle, lightness from radius) and the matched
// output point is drawn in the same color, so displacements are visible.
// The output is a 24-bit BMP; identical inputs produce identical bytes.
void render_pair_panels(const Matrix& input, const Matrix& output,
                        const std::string& bmp_path, const PlotStyle& style = {});

}  // namespace f4f
