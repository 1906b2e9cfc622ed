#pragma once

#include <limits>
#include <optional>
#include <stdexcept>

#include "sunet/image.hpp"

namespace sunet::metrics {

/// Every masked-out pixel: nothing to average over.
class EmptySupport : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// PSNR of identical images. Compare with std::isinf.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

struct QualityReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  long n_pixels = 0;
};

/// 10 log10(1 / MSE) with peak 1.0. The MSE runs over all channels of the
/// pixels where mask == 1 (all pixels when no mask is given).
double psnr(const Image& pred, const Image& ref, const Mask* mask = nullptr);
double psnr(const Raster<double>& pred, const Raster<double>& ref, const Mask* mask = nullptr);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5), per channel,
/// averaged over channels.
double ssim(const Image& pred, const Image& ref);

/// Per-pixel mean |pred - ref| across channels, clamped to [0,1], replicated
/// into three channels for display.
Image diff_map(const Image& pred, const Image& ref);

QualityReport evaluate(const Image& pred, const Image& ref, const Mask* mask = nullptr);

}  // namespace sunet::metrics
