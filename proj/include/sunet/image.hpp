#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sunet {

/// Row-major H x W x C float raster. Channels are interleaved.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int height, int width, int channels, T fill = T{})
      : height_(height), width_(width), channels_(channels),
        data_(checked_size(height, width, channels), fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  const T& at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_shape(const Raster& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  static std::size_t checked_size(int h, int w, int c) {
    if (h <= 0 || w <= 0 || c <= 0) {
      throw std::invalid_argument("raster dimensions must be positive, got " +
                                  std::to_string(h) + "x" + std::to_string(w) +
                                  "x" + std::to_string(c));
    }
    return static_cast<std::size_t>(h) * w * c;
  }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// RGB image with values nominally in [0,1].
using Image = Raster<float>;
/// Per-pixel (dx, dy) displacement in pixels.
using FlowField = Raster<float>;
/// Binary map, values 0 or 1.
using Mask = Raster<std::uint8_t>;

inline Image make_image(int h, int w, float fill = 0.0f) { return Image(h, w, 3, fill); }
inline FlowField make_flow(int h, int w) { return FlowField(h, w, 2, 0.0f); }
inline Mask make_mask(int h, int w, std::uint8_t fill = 1) { return Mask(h, w, 1, fill); }

/// Bilinear sample of channel c at continuous (x, y); pixel centers sit on
/// integer coordinates. Throws std::out_of_range when the 2x2 footprint
/// leaves the raster.
template <typename T>
double sample_bilinear(const Raster<T>& img, double x, double y, int c) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  const int x1 = ax > 0.0 ? x0 + 1 : x0;
  const int y1 = ay > 0.0 ? y0 + 1 : y0;
  if (x0 < 0 || y0 < 0 || x1 >= img.width() || y1 >= img.height()) {
    throw std::out_of_range("bilinear sample at (" + std::to_string(x) + ", " +
                            std::to_string(y) + ") outside " +
                            std::to_string(img.width()) + "x" +
                            std::to_string(img.height()) + " raster");
  }
  const double v00 = img.at(y0, x0, c);
  const double v01 = img.at(y0, x1, c);
  const double v10 = img.at(y1, x0, c);
  const double v11 = img.at(y1, x1, c);
  return (1 - ay) * ((1 - ax) * v00 + ax * v01) + ay * ((1 - ax) * v10 + ax * v11);
}

/// Rounds every value to the nearest k/255, the set representable in 8-bit PNG.
inline void quantize_8bit(Image& img) {
  for (float& v : img.data()) {
    const float clamped = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    v = static_cast<float>(static_cast<int>(clamped * 255.0f + 0.5f)) / 255.0f;
  }
}

}  // namespace sunet
