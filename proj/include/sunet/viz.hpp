#pragma once

// Static renderings for inspection: flow color coding, line plots and bar
// charts. Output images are RGB in [0,1] and meant to be written as PNG.

#include <array>
#include <string>
#include <vector>

#include "sunet/image.hpp"

namespace sunet::viz {

/// Color-wheel flow coding: angle selects the hue, magnitude / max_magnitude
/// the saturation (white is zero motion). max_magnitude <= 0 uses the largest
/// magnitude in the field.
Image flow_to_color(const FlowField& flow, double max_magnitude = 0.0);

/// Square legend of the coding used by flow_to_color.
Image color_wheel(int size);

struct Series {
  std::vector<double> values;
  /// RGB in [0,1].
  std::array<float, 3> color{0.1f, 0.3f, 0.8f};
};

/// Line plot of all series sharing one y range, x = sample index. The y
/// extremes are printed at the left edge. Non-finite values are skipped.
Image plot_lines(const std::vector<Series>& series, int width = 640, int height = 360);

/// One bar per value, labelled with its value. Bars start at `baseline`
/// (values below it draw nothing).
Image plot_bars(const std::vector<double>& values, double baseline, int width = 640,
                int height = 360);

/// Draws `text` with a 3x5 pixel font scaled by `scale`. Supports digits,
/// '.', '-', '+', 'e', ':' and space; other characters render blank.
void draw_text(Image& img, int x, int y, const std::string& text, int scale = 2,
               std::array<float, 3> color = {0.0f, 0.0f, 0.0f});

}  // namespace sunet::viz
