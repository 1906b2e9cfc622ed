#include "sunet/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace sunet::viz {
namespace {

using Rgb = std::array<float, 3>;

// HSV with value 1.
Rgb hue_saturation(double hue, double sat) {
  const double h = std::fmod(hue, 1.0) * 6.0;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = 1.0 - sat, q = 1.0 - sat * f, t = 1.0 - sat * (1.0 - f);
  double r = 1, g = 1, b = 1;
  switch (sector) {
    case 0: r = 1; g = t; b = p; break;
    case 1: r = q; g = 1; b = p; break;
    case 2: r = p; g = 1; b = t; break;
    case 3: r = p; g = q; b = 1; break;
    case 4: r = t; g = p; b = 1; break;
    default: r = 1; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

Rgb flow_color(double dx, double dy, double max_mag) {
  const double mag = std::hypot(dx, dy);
  const double sat = max_mag > 0.0 ? std::min(1.0, mag / max_mag) : 0.0;
  const double hue = (std::atan2(-dy, -dx) / std::numbers::pi + 1.0) / 2.0;
  return hue_saturation(hue, sat);
}

void put(Image& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, const Rgb& c) {
  for (int y = std::max(0, y0); y < std::min(img.height(), y1); ++y)
    for (int x = std::max(0, x0); x < std::min(img.width(), x1); ++x) put(img, x, y, c);
}

void line(Image& img, double x0, double y0, double x1, double y1, const Rgb& c) {
  const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= n; ++i) {
    const double a = static_cast<double>(i) / n;
    const int x = static_cast<int>(std::lround(x0 + a * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + a * (y1 - y0)));
    put(img, x, y, c);
    put(img, x, y + 1, c);
  }
}

// 3x5 glyphs, one row per entry, bit 2 is the leftmost column.
const std::array<std::uint8_t, 5>* glyph(char ch) {
  static const std::array<std::uint8_t, 5> digits[10] = {
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}};
  static const std::array<std::uint8_t, 5> dot{0, 0, 0, 0, 2}, minus{0, 0, 7, 0, 0},
      plus{0, 2, 7, 2, 0}, e{0, 7, 7, 4, 7}, colon{0, 2, 0, 2, 0};
  if (ch >= '0' && ch <= '9') return &digits[ch - '0'];
  switch (ch) {
    case '.': return &dot;
    case '-': return &minus;
    case '+': return &plus;
    case 'e': return &e;
    case ':': return &colon;
    default: return nullptr;
  }
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

Image flow_to_color(const FlowField& flow, double max_magnitude) {
  if (max_magnitude <= 0.0) {
    for (int y = 0; y < flow.height(); ++y)
      for (int x = 0; x < flow.width(); ++x)
        max_magnitude = std::max(max_magnitude, std::hypot(double(flow.at(y, x, 0)), double(flow.at(y, x, 1))));
  }
  Image out = make_image(flow.height(), flow.width());
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) put(out, x, y, flow_color(flow.at(y, x, 0), flow.at(y, x, 1), max_magnitude));
  return out;
}

Image color_wheel(int size) {
  Image out = make_image(size, size, 1.0f);
  const double r = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = (x - r) / r, dy = (y - r) / r;
      if (std::hypot(dx, dy) <= 1.0) put(out, x, y, flow_color(dx, dy, 1.0));
    }
  return out;
}

void draw_text(Image& img, int x, int y, const std::string& text, int scale, Rgb color) {
  for (char ch : text) {
    if (const auto* g = glyph(ch)) {
      for (int row = 0; row < 5; ++row)
        for (int col = 0; col < 3; ++col)
          if ((*g)[row] >> (2 - col) & 1) {
            fill_rect(img, x + col * scale, y + row * scale, x + (col + 1) * scale, y + (row + 1) * scale, color);
          }
    }
    x += 4 * scale;
  }
}

Image plot_lines(const std::vector<Series>& series, int width, int height) {
  Image img = make_image(height, width, 1.0f);
  const int left = 70, right = 10, top = 10, bottom = 20;
  double lo = INFINITY, hi = -INFINITY;
  std::size_t n = 0;
  for (const Series& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  const Rgb axis{0.2f, 0.2f, 0.2f};
  line(img, left, top, left, height - bottom, axis);
  line(img, left, height - bottom, width - right, height - bottom, axis);
  if (!std::isfinite(lo)) return img;
  if (hi == lo) hi = lo + 1.0;
  draw_text(img, 4, top, short_number(hi));
  draw_text(img, 4, height - bottom - 10, short_number(lo));
  draw_text(img, width - right - 40, height - bottom + 6, std::to_string(n));
  const double sx = n > 1 ? (width - left - right) / static_cast<double>(n - 1) : 0.0;
  const double sy = (height - top - bottom) / (hi - lo);
  for (const Series& s : series) {
    double px = NAN, py = NAN;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (!std::isfinite(s.values[i])) continue;
      const double x = left + sx * i, y = height - bottom - sy * (s.values[i] - lo);
      if (std::isfinite(px)) line(img, px, py, x, y, s.color);
      else put(img, static_cast<int>(x), static_cast<int>(y), s.color);
      px = x;
      py = y;
    }
  }
  return img;
}

Image plot_bars(const std::vector<double>& values, double baseline, int width, int height) {
  Image img = make_image(height, width, 1.0f);
  const int left = 10, right = 10, top = 24, bottom = 20;
  const Rgb axis{0.2f, 0.2f, 0.2f};
  line(img, left, height - bottom, width - right, height - bottom, axis);
  double hi = baseline;
  for (double v : values)
    if (std::isfinite(v)) hi = std::max(hi, v);
  if (values.empty() || hi == baseline) return img;
  const double slot = (width - left - right) / static_cast<double>(values.size());
  const double sy = (height - top - bottom) / (hi - baseline);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int x0 = static_cast<int>(left + slot * i + slot * 0.15);
    const int x1 = static_cast<int>(left + slot * (i + 1) - slot * 0.15);
    draw_text(img, x0, height - bottom + 6, std::to_string(i + 1));
    if (!std::isfinite(values[i])) continue;
    const int y0 = static_cast<int>(height - bottom - sy * std::max(0.0, values[i] - baseline));
    fill_rect(img, x0, y0, x1, height - bottom, hue_saturation(0.6 - 0.1 * (i % 4), 0.7));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", values[i]);
    draw_text(img, x0, y0 - 14, buf);
  }
  return img;
}

}  // namespace sunet::viz
