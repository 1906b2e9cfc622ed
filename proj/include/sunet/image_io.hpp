#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "sunet/image.hpp"

namespace sunet {

/// Raised for missing, truncated or malformed files. The message always
/// carries the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit PNG. RGB images are written as RGB8; values are clamped to [0,1] and
// rounded to k/255. Grayscale and RGBA inputs are expanded/stripped on read.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// Masks are stored as 8-bit grayscale with 0/255 levels.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

/// Flow container: magic "RSFL", u32 height, u32 width, then height*width*2
/// little-endian float32 values in row-major (dx, dy) order.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

}  // namespace sunet
