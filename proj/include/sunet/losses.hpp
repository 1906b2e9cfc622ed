#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sunet/model.hpp"

namespace sunet::loss {

struct LossWeights {
  double reconstruction = 10.0;
  double perceptual = 1.0;
  double consistency = 5.0;
  double smoothness = 0.1;

  /// Throws std::invalid_argument for negative or non-finite weights.
  void validate() const;
};

/// How the per-frame branch images are supervised.
enum class ConsistencyMode {
  kGroundTruth,  // |I_GT - I_{t->g}| for both frames
  kSelf,         // |I_{1->g} - I_{2->g}|
  kOff,          // term excluded from the total
};

std::string to_string(ConsistencyMode mode);
ConsistencyMode consistency_mode_from_string(const std::string& name);

/// Levels supervised by the reconstruction and perceptual terms: the fused
/// images at 4, 3, 2 plus the full-resolution output at 1.
inline constexpr std::array<int, 4> kImageLevels{1, 2, 3, 4};
/// Levels of the branch images and flows: 2, 3, 4.
inline constexpr std::array<int, 3> kBranchLevels{2, 3, 4};

/// Ground truth at level l is the full-resolution image 2x2-average-pooled
/// l-1 times (ceil mode, so odd sizes keep their last row/column).
struct SupervisionPyramid {
  std::map<int, torch::Tensor> levels;

  const torch::Tensor& at(int level) const;
};

SupervisionPyramid make_supervision(const torch::Tensor& gt_full, int max_level = 4);

/// Frozen feature map used by the perceptual loss.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual torch::Tensor features(const torch::Tensor& image) = 0;
  virtual std::string name() const = 0;
  /// Converts the frozen weights (e.g. to double for gradient checks).
  virtual void to(torch::Dtype dtype) = 0;
};

/// VGG19 up to relu3_3 with ImageNet input normalization. Weights come from a
/// tensor archive using torchvision's "features.<i>.weight|bias" names.
std::unique_ptr<FeatureExtractor> load_vgg19_conv33(const std::filesystem::path& weights);

/// One frozen 3x3 conv (padding 1) followed by ReLU, optionally preceded by
/// a 2x2 max pool.
struct ConvLayerSpec {
  torch::Tensor weight;
  torch::Tensor bias;
  int stride = 1;
  bool pool_before = false;
};

/// Weights of the fallback stack: 3->16, 16->32 stride 2, 32->32.
std::vector<ConvLayerSpec> fallback_extractor_layers(std::uint64_t seed = 19);
/// Fixed-seed frozen 3-layer conv stack built from fallback_extractor_layers.
std::unique_ptr<FeatureExtractor> make_fallback_extractor(std::uint64_t seed = 19);

/// Environment variable naming pretrained VGG19 weights.
inline constexpr const char* kVggWeightsEnv = "SUNET_VGG19_WEIGHTS";

/// Uses `weights_path` (or the environment variable when empty) if set;
/// otherwise the fallback, with a warning on stderr. An explicitly given path
/// that fails to load is an error.
std::unique_ptr<FeatureExtractor> make_perceptual_extractor(
    const std::filesystem::path& weights_path = {}, bool quiet = false);

/// Sum over image levels of mean |I_GT - I_g|.
torch::Tensor reconstruction_loss(const model::MultiScaleOutput& out,
                                  const SupervisionPyramid& gt);
/// Sum over image levels of mean |phi(I_GT) - phi(I_g)|.
torch::Tensor perceptual_loss(const model::MultiScaleOutput& out, const SupervisionPyramid& gt,
                              FeatureExtractor& phi);
/// Sum over frames and branch levels; see ConsistencyMode. kOff yields the
/// ground-truth form (the weight is dropped in total_loss instead).
torch::Tensor consistency_loss(const model::MultiScaleOutput& out, const SupervisionPyramid& gt,
                               ConsistencyMode mode = ConsistencyMode::kGroundTruth);
/// Sum over frames and branch levels of the mean l2 norm of the forward-
/// difference flow gradient on interior pixels.
torch::Tensor smoothness_loss(const model::MultiScaleOutput& out);

struct LossBreakdown {
  torch::Tensor total;
  torch::Tensor reconstruction;
  torch::Tensor perceptual;
  torch::Tensor consistency;
  torch::Tensor smoothness;
};

/// Weighted sum. Terms with zero weight (or consistency in kOff mode) are
/// evaluated without gradient tracking and contribute nothing.
LossBreakdown total_loss(const model::MultiScaleOutput& out, const SupervisionPyramid& gt,
                         const LossWeights& weights, FeatureExtractor& phi,
                         ConsistencyMode mode = ConsistencyMode::kGroundTruth);

}  // namespace sunet::loss
