#pragma once

// Symmetric undistortion network. Two RS frames share one feature pyramid;
// coarse-to-fine, each level warps the frame features toward the time-centered
// GS instant, decodes per-frame and fused GS images, correlates the two warped
// feature maps and refines the undistortion flows for the next finer level.
//
// Level numbering follows the pyramid: level 0 is the input, level l >= 1 has
// resolution (H, W) / 2^(l-1). With 5 feature levels and desired level 3 the
// network emits flows and images at levels 4, 3, 2 plus a full-resolution
// image at level 1.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sunet::model {

inline constexpr int kPyramidLevels = 5;
inline constexpr int kDesiredLevel = 3;
inline constexpr std::array<int, kPyramidLevels> kPyramidChannels{16, 32, 64, 96, 128};
inline constexpr int kResBlocksPerStage = 3;
/// Input sizes are padded to a multiple of 2^(levels-1).
inline constexpr int kSizeMultiple = 1 << (kPyramidLevels - 1);

/// Dense-block widths of the flow estimator at pyramid level 5, 4 and 3.
std::array<int, 5> dense_schedule(int level);

/// Channels of pyramid level l in 1..5.
constexpr int pyramid_channels(int level) { return kPyramidChannels[level - 1]; }

struct ModelConfig {
  /// Cost-volume search range; 0 removes the cost volume entirely.
  int search_range = 4;
  /// Level-1 transitional conv kernel in {0, 3, 5, 7}; 0 removes level 1 and
  /// level 2 downsamples the input image directly.
  int level1_kernel = 7;
  /// Scale each upsampled flow by the per-row offset to the target time.
  bool time_offset = false;

  void validate() const;
  std::map<std::string, std::string> to_metadata() const;
  static ModelConfig from_metadata(const std::map<std::string, std::string>& meta);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// c_t^0 .. c_t^5. levels[1] is undefined when the transitional layer is removed.
struct FeaturePyramid {
  std::array<torch::Tensor, kPyramidLevels + 1> levels;
};

/// Outputs at one decoding level l in {4, 3, 2}. Index 0/1 is frame 1/2.
struct LevelOutput {
  int level = 0;
  std::array<torch::Tensor, 2> flow;           // F_{t->g}^l, N x 2 x h x w
  std::array<torch::Tensor, 2> branch_image;   // I_{t->g}^l, N x 3 x h x w
  torch::Tensor fused_image;                   // I_g^l
};

struct MultiScaleOutput {
  /// Coarse to fine: levels 4, 3, 2.
  std::vector<LevelOutput> levels;
  /// I_g^1 at input resolution.
  torch::Tensor final_image;

  const LevelOutput& at(int level) const;
};

/// Optional capture of internals for shape/property inspection.
struct ForwardTrace {
  std::array<FeaturePyramid, 2> pyramids;
  /// Keyed by level; index 0 is the volume consumed by branch 1 (reference
  /// c_{1->g}), index 1 by branch 2.
  std::map<int, std::array<torch::Tensor, 2>> cost_volumes;
  /// Flow emitted at the estimator's own level, before upsampling.
  std::map<int, std::array<torch::Tensor, 2>> coarse_flows;
};

/// conv3x3 -> ReLU -> conv3x3, added to the input.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class ResidualStackImpl : public torch::nn::Module {
 public:
  ResidualStackImpl(int channels, int blocks);
  torch::Tensor forward(torch::Tensor x);

 private:
  std::vector<ResidualBlock> blocks_;
};
TORCH_MODULE(ResidualStack);

class FeaturePyramidExtractorImpl : public torch::nn::Module {
 public:
  explicit FeaturePyramidExtractorImpl(int level1_kernel);
  /// image: N x 3 x H x W with H, W divisible by 16.
  FeaturePyramid forward(const torch::Tensor& image);

 private:
  torch::nn::Conv2d level1_{nullptr};
  std::array<torch::nn::Conv2d, kPyramidLevels - 1> down_{nullptr, nullptr, nullptr, nullptr};
  std::array<ResidualStack, kPyramidLevels - 1> res_{nullptr, nullptr, nullptr, nullptr};
  int level1_kernel_;
};
TORCH_MODULE(FeaturePyramidExtractor);

struct FlowEstimate {
  torch::Tensor upsampled;  // flow at level l-1
  torch::Tensor coarse;     // flow at level l
};

/// Densely connected conv stack over [features, cost volume, upsampled flow].
class FlowEstimatorImpl : public torch::nn::Module {
 public:
  FlowEstimatorImpl(int level, int search_range, bool has_prior_flow);
  /// cost_volume and prior_flow may be undefined when not configured.
  FlowEstimate forward(const torch::Tensor& features, const torch::Tensor& cost_volume,
                       const torch::Tensor& prior_flow);
  const std::array<int, 5>& schedule() const { return schedule_; }
  int input_channels() const { return input_channels_; }

 private:
  std::array<int, 5> schedule_;
  int input_channels_;
  bool has_prior_flow_;
  bool has_cost_volume_;
  std::vector<torch::nn::Conv2d> dense_;
  torch::nn::Conv2d predict_{nullptr};
  torch::nn::ConvTranspose2d upsample_{nullptr};
};
TORCH_MODULE(FlowEstimator);

struct DecoderOutput {
  std::array<torch::Tensor, 2> branch_image;
  torch::Tensor fused_image;
  torch::Tensor carry;  // undefined when the decoder has no finer successor
};

/// Per-frame GS image branches (shared weights) plus the gated fusion path.
class GsDecoderImpl : public torch::nn::Module {
 public:
  GsDecoderImpl(int level, bool has_carry_in, bool has_carry_out);
  torch::Tensor decode_branch(const torch::Tensor& warped);
  DecoderOutput forward(const torch::Tensor& warped1, const torch::Tensor& warped2,
                        const torch::Tensor& carry);

 private:
  int channels_;
  bool has_carry_in_;
  bool has_carry_out_;
  ResidualStack branch_res_{nullptr};
  torch::nn::Conv2d branch_predict_{nullptr};
  torch::nn::Conv2d fuse_gate_{nullptr};
  torch::nn::Conv2d fuse_entry_{nullptr};
  ResidualStack fuse_res_{nullptr};
  torch::nn::Conv2d fuse_predict_{nullptr};
  torch::nn::ConvTranspose2d carry_{nullptr};
};
TORCH_MODULE(GsDecoder);

class SunetImpl : public torch::nn::Module {
 public:
  explicit SunetImpl(const ModelConfig& config, std::uint64_t seed = 0);

  /// frame1, frame2: N x 3 x H x W. Pads internally to a multiple of 16 and
  /// crops every output back.
  MultiScaleOutput forward(const torch::Tensor& frame1, const torch::Tensor& frame2,
                           ForwardTrace* trace = nullptr);

  FeaturePyramid extract_pyramid(const torch::Tensor& image) { return pyramid_->forward(image); }
  const ModelConfig& config() const { return config_; }
  FlowEstimator& estimator(int level);
  GsDecoder& decoder(int level);

  /// Re-draws every conv weight from a fan-in scaled normal and zeroes biases.
  void reset_parameters(std::uint64_t seed);

 private:
  torch::Tensor apply_time_offset(const torch::Tensor& flow, int frame) const;

  ModelConfig config_;
  FeaturePyramidExtractor pyramid_{nullptr};
  std::map<int, FlowEstimator> estimators_;  // levels 5, 4, 3
  std::map<int, GsDecoder> decoders_;        // levels 4, 3, 2
  torch::nn::Conv2d final_conv_{nullptr};
};
TORCH_MODULE(Sunet);

/// Reflection pad on the bottom/right up to a multiple of `multiple`; falls
/// back to replicate padding where the image is too small to reflect.
torch::Tensor pad_to_multiple(const torch::Tensor& image, int multiple);

/// Deterministic checksum over all parameters (bitwise, order-sensitive).
std::uint64_t parameter_checksum(const torch::nn::Module& module);

}  // namespace sunet::model
