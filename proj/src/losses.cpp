#include "sunet/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <stdexcept>

#include "sunet/checkpoint.hpp"

namespace sunet::loss {
namespace {

namespace F = torch::nn::functional;
using torch::Tensor;

Tensor mean_abs(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw std::invalid_argument("loss: missing tensor");
  if (a.sizes() != b.sizes()) {
    throw std::invalid_argument("loss: shape mismatch between prediction and target");
  }
  return (a - b).abs().mean();
}

const Tensor& fused_at(const model::MultiScaleOutput& out, int level) {
  if (level == 1) {
    if (!out.final_image.defined()) throw std::invalid_argument("loss: missing full-resolution output");
    return out.final_image;
  }
  return out.at(level).fused_image;
}

Tensor zero_like_output(const model::MultiScaleOutput& out) {
  return torch::zeros({}, out.final_image.options());
}

class ConvStackExtractor : public FeatureExtractor {
 public:
  ConvStackExtractor(std::string name, std::vector<ConvLayerSpec> layers, Tensor mean, Tensor stdev)
      : name_(std::move(name)), layers_(std::move(layers)), mean_(std::move(mean)),
        std_(std::move(stdev)) {}

  Tensor features(const Tensor& image) override {
    Tensor x = image;
    if (mean_.defined()) x = (x - mean_.to(x.dtype())) / std_.to(x.dtype());
    for (const ConvLayerSpec& l : layers_) {
      if (l.pool_before) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2).ceil_mode(true));
      x = torch::relu(F::conv2d(x, l.weight.to(x.dtype()),
                                F::Conv2dFuncOptions().bias(l.bias.to(x.dtype())).stride(l.stride).padding(1)));
    }
    return x;
  }

  std::string name() const override { return name_; }

  void to(torch::Dtype dtype) override {
    for (ConvLayerSpec& l : layers_) {
      l.weight = l.weight.to(dtype);
      l.bias = l.bias.to(dtype);
    }
  }

 private:
  std::string name_;
  std::vector<ConvLayerSpec> layers_;
  Tensor mean_;
  Tensor std_;
};

}  // namespace

void LossWeights::validate() const {
  for (double w : {reconstruction, perceptual, consistency, smoothness}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
}

std::string to_string(ConsistencyMode mode) {
  switch (mode) {
    case ConsistencyMode::kGroundTruth: return "gt";
    case ConsistencyMode::kSelf: return "self";
    case ConsistencyMode::kOff: return "off";
  }
  return "?";
}

ConsistencyMode consistency_mode_from_string(const std::string& name) {
  if (name == "gt") return ConsistencyMode::kGroundTruth;
  if (name == "self") return ConsistencyMode::kSelf;
  if (name == "off") return ConsistencyMode::kOff;
  throw std::invalid_argument("unknown consistency mode '" + name + "' (expected gt, self or off)");
}

const Tensor& SupervisionPyramid::at(int level) const {
  const auto it = levels.find(level);
  if (it == levels.end()) {
    throw std::out_of_range("supervision pyramid has no level " + std::to_string(level));
  }
  return it->second;
}

SupervisionPyramid make_supervision(const Tensor& gt_full, int max_level) {
  if (gt_full.dim() != 4) throw std::invalid_argument("make_supervision: expected N x C x H x W");
  SupervisionPyramid p;
  Tensor cur = gt_full;
  p.levels[1] = cur;
  for (int l = 2; l <= max_level; ++l) {
    cur = F::avg_pool2d(cur, F::AvgPool2dFuncOptions(2).stride(2).ceil_mode(true).count_include_pad(false));
    p.levels[l] = cur;
  }
  return p;
}

std::unique_ptr<FeatureExtractor> load_vgg19_conv33(const std::filesystem::path& weights) {
  const ckpt::TensorArchive a = ckpt::read_archive(weights);
  // torchvision indices of conv1_1 .. conv3_3 inside vgg19.features.
  const std::array<int, 7> index{0, 2, 5, 7, 10, 12, 14};
  std::vector<ConvLayerSpec> layers;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::string base = "features." + std::to_string(index[i]);
    const Tensor* w = a.find(base + ".weight");
    const Tensor* b = a.find(base + ".bias");
    if (!w || !b) throw std::runtime_error(weights.string() + ": missing " + base + " weights");
    ConvLayerSpec l;
    l.weight = w->to(torch::kFloat32);
    l.bias = b->to(torch::kFloat32);
    l.pool_before = i == 2 || i == 4;
    layers.push_back(std::move(l));
  }
  Tensor mean = torch::tensor({0.485f, 0.456f, 0.406f}).view({1, 3, 1, 1});
  Tensor stdev = torch::tensor({0.229f, 0.224f, 0.225f}).view({1, 3, 1, 1});
  return std::make_unique<ConvStackExtractor>("vgg19-relu3_3", std::move(layers), mean, stdev);
}

std::vector<ConvLayerSpec> fallback_extractor_layers(std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  struct Shape { int in, out, stride; };
  std::vector<ConvLayerSpec> layers;
  for (const Shape s : {Shape{3, 16, 1}, Shape{16, 32, 2}, Shape{32, 32, 1}}) {
    ConvLayerSpec l;
    l.weight = torch::empty({s.out, s.in, 3, 3});
    l.weight.normal_(0.0, std::sqrt(2.0 / (s.in * 9.0)), gen);
    l.bias = torch::zeros({s.out});
    l.stride = s.stride;
    layers.push_back(std::move(l));
  }
  return layers;
}

std::unique_ptr<FeatureExtractor> make_fallback_extractor(std::uint64_t seed) {
  return std::make_unique<ConvStackExtractor>("fallback-conv3", fallback_extractor_layers(seed),
                                              Tensor(), Tensor());
}

std::unique_ptr<FeatureExtractor> make_perceptual_extractor(const std::filesystem::path& weights_path,
                                                            bool quiet) {
  std::filesystem::path path = weights_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kVggWeightsEnv); env && *env) path = env;
  }
  if (!path.empty()) return load_vgg19_conv33(path);
  if (!quiet) {
    std::cerr << "warning: no VGG19 weights (set " << kVggWeightsEnv
              << "); perceptual loss uses the fixed-seed fallback extractor\n";
  }
  return make_fallback_extractor();
}

Tensor reconstruction_loss(const model::MultiScaleOutput& out, const SupervisionPyramid& gt) {
  Tensor sum = zero_like_output(out);
  for (int l : kImageLevels) sum = sum + mean_abs(fused_at(out, l), gt.at(l));
  return sum;
}

Tensor perceptual_loss(const model::MultiScaleOutput& out, const SupervisionPyramid& gt,
                       FeatureExtractor& phi) {
  Tensor sum = zero_like_output(out);
  for (int l : kImageLevels) {
    Tensor target;
    {
      torch::NoGradGuard no_grad;
      target = phi.features(gt.at(l));
    }
    sum = sum + mean_abs(phi.features(fused_at(out, l)), target);
  }
  return sum;
}

Tensor consistency_loss(const model::MultiScaleOutput& out, const SupervisionPyramid& gt,
                        ConsistencyMode mode) {
  Tensor sum = zero_like_output(out);
  for (int l : kBranchLevels) {
    const auto& lo = out.at(l);
    if (mode == ConsistencyMode::kSelf) {
      sum = sum + mean_abs(lo.branch_image[0], lo.branch_image[1]);
    } else {
      for (int t = 0; t < 2; ++t) sum = sum + mean_abs(lo.branch_image[t], gt.at(l));
    }
  }
  return sum;
}

Tensor smoothness_loss(const model::MultiScaleOutput& out) {
  Tensor sum = zero_like_output(out);
  for (int l : kBranchLevels) {
    const auto& lo = out.at(l);
    for (int t = 0; t < 2; ++t) {
      const Tensor& f = lo.flow[t];
      if (!f.defined() || f.dim() != 4 || f.size(1) != 2) {
        throw std::invalid_argument("smoothness_loss: expected N x 2 x h x w flows");
      }
      const long h = f.size(2), w = f.size(3);
      if (h < 2 || w < 2) continue;
      const Tensor inner = f.slice(2, 0, h - 1).slice(3, 0, w - 1);
      const Tensor dx = f.slice(2, 0, h - 1).slice(3, 1, w) - inner;
      const Tensor dy = f.slice(2, 1, h).slice(3, 0, w - 1) - inner;
      // Per-pixel norm of the 2x2 Jacobian.
      const Tensor jac = torch::cat({dx, dy}, 1);
      sum = sum + torch::linalg_vector_norm(jac, 2, std::vector<int64_t>{1}, false, std::nullopt).mean();
    }
  }
  return sum;
}

LossBreakdown total_loss(const model::MultiScaleOutput& out, const SupervisionPyramid& gt,
                         const LossWeights& weights, FeatureExtractor& phi, ConsistencyMode mode) {
  weights.validate();
  const double wc = mode == ConsistencyMode::kOff ? 0.0 : weights.consistency;
  auto term = [](double w, auto&& fn) {
    if (w == 0.0) {
      torch::NoGradGuard no_grad;
      return fn().detach();
    }
    return fn();
  };
  LossBreakdown b;
  b.reconstruction = term(weights.reconstruction, [&] { return reconstruction_loss(out, gt); });
  b.perceptual = term(weights.perceptual, [&] { return perceptual_loss(out, gt, phi); });
  b.consistency = term(wc, [&] { return consistency_loss(out, gt, mode); });
  b.smoothness = term(weights.smoothness, [&] { return smoothness_loss(out); });

  Tensor total = zero_like_output(out);
  if (weights.reconstruction != 0.0) total = total + weights.reconstruction * b.reconstruction;
  if (weights.perceptual != 0.0) total = total + weights.perceptual * b.perceptual;
  if (wc != 0.0) total = total + wc * b.consistency;
  if (weights.smoothness != 0.0) total = total + weights.smoothness * b.smoothness;
  b.total = total;
  return b;
}

}  // namespace sunet::loss
