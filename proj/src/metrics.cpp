#include "sunet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace sunet::metrics {
namespace {

template <typename T>
void require_same_shape(const Raster<T>& a, const Raster<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("shape mismatch: " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + "x" + std::to_string(a.channels()) +
                                " vs " + std::to_string(b.height()) + "x" +
                                std::to_string(b.width()) + "x" + std::to_string(b.channels()));
  }
}

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  constexpr int r = kSsimWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    k[i] = std::exp(-0.5 * (i - r) * (i - r) / (kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode separable filtering of one channel.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w) {
  static const auto k = ssim_kernel();
  const int oh = h - kSsimWindow + 1;
  const int ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

template <typename T>
double psnr_impl(const Raster<T>& pred, const Raster<T>& ref, const Mask* mask) {
  require_same_shape(pred, ref);
  if (mask && (mask->height() != pred.height() || mask->width() != pred.width())) {
    throw std::invalid_argument("mask shape does not match images");
  }
  double sse = 0.0;
  long count = 0;
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      if (mask && mask->at(y, x) == 0) continue;
      for (int c = 0; c < pred.channels(); ++c) {
        const double d = static_cast<double>(pred.at(y, x, c)) - ref.at(y, x, c);
        sse += d * d;
      }
      count += pred.channels();
    }
  }
  if (count == 0) throw EmptySupport("psnr: mask selects no pixels");
  const double mse = sse / static_cast<double>(count);
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace

double psnr(const Image& pred, const Image& ref, const Mask* mask) {
  return psnr_impl(pred, ref, mask);
}

double psnr(const Raster<double>& pred, const Raster<double>& ref, const Mask* mask) {
  return psnr_impl(pred, ref, mask);
}

double ssim(const Image& pred, const Image& ref) {
  require_same_shape(pred, ref);
  const int h = pred.height();
  const int w = pred.width();
  if (h < kSsimWindow || w < kSsimWindow) {
    throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " is smaller than the " + std::to_string(kSsimWindow) + "x" +
                                std::to_string(kSsimWindow) + " window");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  for (int c = 0; c < pred.channels(); ++c) {
    std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        a[i] = pred.at(y, x, c);
        b[i] = ref.at(y, x, c);
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
      }
    }
    const auto mu_a = filter_valid(a, h, w);
    const auto mu_b = filter_valid(b, h, w);
    const auto e_aa = filter_valid(aa, h, w);
    const auto e_bb = filter_valid(bb, h, w);
    const auto e_ab = filter_valid(ab, h, w);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2 * mu_a[i] * mu_b[i] + kSsimC1) * (2 * cov + kSsimC2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kSsimC1) * (va + vb + kSsimC2);
      sum += num / den;
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / pred.channels();
}

Image diff_map(const Image& pred, const Image& ref) {
  require_same_shape(pred, ref);
  Image out(pred.height(), pred.width(), 3);
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      double acc = 0.0;
      for (int c = 0; c < pred.channels(); ++c) {
        acc += std::abs(static_cast<double>(pred.at(y, x, c)) - ref.at(y, x, c));
      }
      const double v = std::min(1.0, acc / pred.channels());
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(v);
    }
  }
  return out;
}

QualityReport evaluate(const Image& pred, const Image& ref, const Mask* mask) {
  QualityReport r;
  r.psnr_db = psnr(pred, ref, mask);
  r.ssim = ssim(pred, ref);
  long n = 0;
  if (mask) {
    for (auto v : mask->data()) n += v ? 1 : 0;
  } else {
    n = static_cast<long>(pred.height()) * pred.width();
  }
  r.n_pixels = n;
  return r;
}

}  // namespace sunet::metrics
