#include "sunet/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <stdexcept>

#include "sunet/ops.hpp"

namespace sunet::model {
namespace {

namespace F = torch::nn::functional;
using torch::Tensor;

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

// Exactly doubles the spatial size.
torch::nn::ConvTranspose2d deconv(int in, int out) {
  return torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
}

Tensor crop_to(const Tensor& t, long h, long w) {
  return t.slice(2, 0, h).slice(3, 0, w);
}

long ceil_div(long a, long b) { return (a + b - 1) / b; }

}  // namespace

std::array<int, 5> dense_schedule(int level) {
  switch (level) {
    case 5: return {128, 128, 96, 64, 32};
    case 4: return {64, 64, 48, 32, 16};
    case 3: return {32, 32, 24, 16, 8};
    default:
      throw std::invalid_argument("no flow estimator at pyramid level " + std::to_string(level));
  }
}

void ModelConfig::validate() const {
  if (search_range < 0) throw std::invalid_argument("search_range must be >= 0");
  if (level1_kernel != 0 && level1_kernel != 3 && level1_kernel != 5 && level1_kernel != 7) {
    throw std::invalid_argument("level1_kernel must be one of 0, 3, 5, 7");
  }
}

std::map<std::string, std::string> ModelConfig::to_metadata() const {
  return {{"arch.search_range", std::to_string(search_range)},
          {"arch.level1_kernel", std::to_string(level1_kernel)},
          {"arch.time_offset", time_offset ? "1" : "0"}};
}

ModelConfig ModelConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  const auto get = [&](const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw std::invalid_argument("checkpoint lacks " + key);
    return it->second;
  };
  ModelConfig c;
  c.search_range = std::stoi(get("arch.search_range"));
  c.level1_kernel = std::stoi(get("arch.level1_kernel"));
  c.time_offset = get("arch.time_offset") == "1";
  c.validate();
  return c;
}

const LevelOutput& MultiScaleOutput::at(int level) const {
  for (const auto& l : levels) {
    if (l.level == level) return l;
  }
  throw std::out_of_range("no output at level " + std::to_string(level));
}

ResidualBlockImpl::ResidualBlockImpl(int channels)
    : conv1_(register_module("conv1", conv(channels, channels, 3))),
      conv2_(register_module("conv2", conv(channels, channels, 3))) {}

Tensor ResidualBlockImpl::forward(const Tensor& x) {
  return x + conv2_(torch::relu(conv1_(x)));
}

ResidualStackImpl::ResidualStackImpl(int channels, int blocks) {
  for (int i = 0; i < blocks; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i), ResidualBlock(channels)));
  }
}

Tensor ResidualStackImpl::forward(Tensor x) {
  for (auto& b : blocks_) x = b(x);
  return x;
}

FeaturePyramidExtractorImpl::FeaturePyramidExtractorImpl(int level1_kernel)
    : level1_kernel_(level1_kernel) {
  if (level1_kernel > 0) {
    level1_ = register_module("level1", conv(3, pyramid_channels(1), level1_kernel));
  }
  for (int l = 2; l <= kPyramidLevels; ++l) {
    const int in = l == 2 ? (level1_kernel > 0 ? pyramid_channels(1) : 3) : pyramid_channels(l - 1);
    down_[l - 2] = register_module("down" + std::to_string(l), conv(in, pyramid_channels(l), 3, 2));
    res_[l - 2] = register_module("res" + std::to_string(l),
                                  ResidualStack(pyramid_channels(l), kResBlocksPerStage));
  }
}

FeaturePyramid FeaturePyramidExtractorImpl::forward(const Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw std::invalid_argument("extract_pyramid: expected N x 3 x H x W input");
  }
  if (image.size(2) % kSizeMultiple != 0 || image.size(3) % kSizeMultiple != 0) {
    throw std::invalid_argument("extract_pyramid: input " + std::to_string(image.size(2)) + "x" +
                                std::to_string(image.size(3)) +
                                " must be padded to a multiple of " +
                                std::to_string(kSizeMultiple));
  }
  FeaturePyramid p;
  p.levels[0] = image;
  Tensor x = image;
  if (level1_kernel_ > 0) {
    x = torch::relu(level1_(image));
    p.levels[1] = x;
  }
  for (int l = 2; l <= kPyramidLevels; ++l) {
    x = res_[l - 2](torch::relu(down_[l - 2](x)));
    p.levels[l] = x;
  }
  return p;
}

FlowEstimatorImpl::FlowEstimatorImpl(int level, int search_range, bool has_prior_flow)
    : schedule_(dense_schedule(level)),
      has_prior_flow_(has_prior_flow),
      has_cost_volume_(search_range > 0) {
  input_channels_ = pyramid_channels(level) +
                    (has_cost_volume_ ? ops::cost_volume_channels(search_range) : 0) +
                    (has_prior_flow ? 2 : 0);
  int width = input_channels_;
  for (std::size_t i = 0; i < schedule_.size(); ++i) {
    dense_.push_back(register_module("dense" + std::to_string(i), conv(width, schedule_[i], 3)));
    width += schedule_[i];
  }
  predict_ = register_module("predict", conv(width, 2, 3));
  upsample_ = register_module("upsample", deconv(2, 2));
}

FlowEstimate FlowEstimatorImpl::forward(const Tensor& features, const Tensor& cost_volume,
                                        const Tensor& prior_flow) {
  std::vector<Tensor> inputs{features};
  if (has_cost_volume_) {
    if (!cost_volume.defined()) throw std::invalid_argument("flow estimator needs a cost volume");
    inputs.push_back(cost_volume);
  }
  if (has_prior_flow_) {
    if (!prior_flow.defined()) throw std::invalid_argument("flow estimator needs a prior flow");
    inputs.push_back(prior_flow);
  }
  for (const auto& t : inputs) {
    if (t.size(2) != features.size(2) || t.size(3) != features.size(3)) {
      throw std::invalid_argument("flow estimator inputs are not spatially aligned");
    }
  }
  Tensor x = torch::cat(inputs, 1);
  for (auto& layer : dense_) x = torch::cat({torch::relu(layer(x)), x}, 1);
  FlowEstimate out;
  out.coarse = predict_(x);
  out.upsampled = upsample_(out.coarse);
  return out;
}

GsDecoderImpl::GsDecoderImpl(int level, bool has_carry_in, bool has_carry_out)
    : channels_(pyramid_channels(level)),
      has_carry_in_(has_carry_in),
      has_carry_out_(has_carry_out) {
  branch_res_ = register_module("branch_res", ResidualStack(channels_, kResBlocksPerStage));
  branch_predict_ = register_module("branch_predict", conv(channels_, 3, 3));
  const int fused = 2 * channels_ + 6 + (has_carry_in ? channels_ : 0);
  fuse_gate_ = register_module("fuse_gate", conv(fused, fused, 1));
  fuse_entry_ = register_module("fuse_entry", conv(fused, channels_, 3));
  fuse_res_ = register_module("fuse_res", ResidualStack(channels_, kResBlocksPerStage));
  fuse_predict_ = register_module("fuse_predict", conv(channels_, 3, 3));
  if (has_carry_out) {
    carry_ = register_module("carry", deconv(channels_, pyramid_channels(level - 1)));
  }
}

Tensor GsDecoderImpl::decode_branch(const Tensor& warped) {
  return branch_predict_(branch_res_(warped));
}

DecoderOutput GsDecoderImpl::forward(const Tensor& warped1, const Tensor& warped2,
                                     const Tensor& carry) {
  DecoderOutput out;
  out.branch_image[0] = decode_branch(warped1);
  out.branch_image[1] = decode_branch(warped2);
  std::vector<Tensor> parts{warped1, warped2, out.branch_image[0], out.branch_image[1]};
  if (has_carry_in_) {
    if (!carry.defined()) throw std::invalid_argument("decoder expects carried features");
    if (carry.size(2) != warped1.size(2) || carry.size(3) != warped1.size(3)) {
      throw std::invalid_argument("decoder carry resolution " + std::to_string(carry.size(2)) +
                                  "x" + std::to_string(carry.size(3)) + " does not match level " +
                                  std::to_string(warped1.size(2)) + "x" +
                                  std::to_string(warped1.size(3)));
    }
    parts.push_back(carry);
  }
  Tensor x = torch::cat(parts, 1);
  x = x * torch::sigmoid(fuse_gate_(x));
  x = fuse_res_(torch::relu(fuse_entry_(x)));
  out.fused_image = fuse_predict_(x);
  if (has_carry_out_) out.carry = torch::relu(carry_(x));
  return out;
}

SunetImpl::SunetImpl(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  pyramid_ = register_module("pyramid", FeaturePyramidExtractor(config_.level1_kernel));
  for (int level = kPyramidLevels; level >= kDesiredLevel; --level) {
    estimators_.emplace(level, register_module("flow" + std::to_string(level),
                                               FlowEstimator(level, config_.search_range,
                                                             level != kPyramidLevels)));
  }
  for (int level = kPyramidLevels - 1; level >= kDesiredLevel - 1; --level) {
    decoders_.emplace(level, register_module("decoder" + std::to_string(level),
                                             GsDecoder(level, level != kPyramidLevels - 1,
                                                       level != kDesiredLevel - 1)));
  }
  final_conv_ = register_module("final", conv(3, 3, 3));
  reset_parameters(seed);
}

FlowEstimator& SunetImpl::estimator(int level) {
  const auto it = estimators_.find(level);
  if (it == estimators_.end()) throw std::out_of_range("no estimator at level " + std::to_string(level));
  return it->second;
}

GsDecoder& SunetImpl::decoder(int level) {
  const auto it = decoders_.find(level);
  if (it == decoders_.end()) throw std::out_of_range("no decoder at level " + std::to_string(level));
  return it->second;
}

void SunetImpl::reset_parameters(std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (const auto& item : named_modules("", false)) {
    const std::string& name = item.key();
    // Prediction heads and the flow upsampler have no ReLU after them.
    const bool linear_head = name.find("predict") != std::string::npos ||
                             name.find("upsample") != std::string::npos || name == "final";
    double gain = linear_head ? 1.0 : 2.0;
    // Residual branches and flow heads start small.
    const bool damped = name.ends_with(".conv2") ||
                        (name.rfind("flow", 0) == 0 && name.find("predict") != std::string::npos);
    if (damped) gain *= 0.01;
    if (auto* c = item.value()->as<torch::nn::Conv2dImpl>()) {
      const auto& w = c->weight;
      const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
      w.normal_(0.0, std::sqrt(gain / fan_in), gen);
      if (c->bias.defined()) c->bias.zero_();
      if (name == "final") {
        // Near-identity so the upsampled image passes through at the start.
        w.mul_(0.1);
        const long k = w.size(2) / 2;
        for (long ch = 0; ch < w.size(0); ++ch) w[ch][ch][k][k] += 1.0;
      }
    } else if (auto* d = item.value()->as<torch::nn::ConvTranspose2dImpl>()) {
      const auto& w = d->weight;
      // Each output of a stride-2 transposed conv sees a quarter of the taps.
      const double fan_in = static_cast<double>(w.size(0) * w.size(2) * w.size(3)) / 4.0;
      w.normal_(0.0, std::sqrt(gain / fan_in), gen);
      if (d->bias.defined()) d->bias.zero_();
    }
  }
}

Tensor SunetImpl::apply_time_offset(const Tensor& flow, int frame) const {
  if (!config_.time_offset) return flow;
  const long h = flow.size(2);
  Tensor rows = torch::arange(h, flow.options()) / static_cast<double>(h);
  Tensor offset = frame == 1 ? 1.0 - rows : rows;
  return flow * offset.view({1, 1, h, 1});
}

MultiScaleOutput SunetImpl::forward(const Tensor& frame1, const Tensor& frame2,
                                    ForwardTrace* trace) {
  if (frame1.sizes() != frame2.sizes()) {
    throw std::invalid_argument("sunet_forward: frames have different shapes");
  }
  if (frame1.dim() != 4 || frame1.size(1) != 3) {
    throw std::invalid_argument("sunet_forward: expected N x 3 x H x W frames");
  }
  const long H = frame1.size(2);
  const long W = frame1.size(3);
  const int d = config_.search_range;

  const std::array<FeaturePyramid, 2> pyr{pyramid_->forward(pad_to_multiple(frame1, kSizeMultiple)),
                                          pyramid_->forward(pad_to_multiple(frame2, kSizeMultiple))};
  if (trace) trace->pyramids = pyr;

  // Branch t correlates with its own warped features as reference.
  auto volumes = [&](int level, const Tensor& a, const Tensor& b) {
    std::array<Tensor, 2> cv;
    if (d > 0) {
      cv[0] = ops::cost_volume(a, b, d);
      cv[1] = ops::cost_volume(b, a, d);
    }
    if (trace) trace->cost_volumes[level] = cv;
    return cv;
  };

  std::array<Tensor, 2> flow;
  {
    const int top = kPyramidLevels;
    const auto cv = volumes(top, pyr[0].levels[top], pyr[1].levels[top]);
    for (int t = 0; t < 2; ++t) {
      const FlowEstimate e = estimator(top)->forward(pyr[t].levels[top], cv[t], Tensor());
      if (trace) trace->coarse_flows[top][t] = e.coarse;
      flow[t] = apply_time_offset(e.upsampled, t + 1);
    }
  }

  MultiScaleOutput out;
  Tensor carry;
  Tensor last_fused;
  for (int level = kPyramidLevels - 1; level >= kDesiredLevel - 1; --level) {
    const std::array<Tensor, 2> warped{ops::forward_warp(pyr[0].levels[level], flow[0]),
                                       ops::forward_warp(pyr[1].levels[level], flow[1])};
    DecoderOutput dec = decoder(level)->forward(warped[0], warped[1], carry);
    carry = dec.carry;
    last_fused = dec.fused_image;

    const long factor = 1L << (level - 1);
    const long h = ceil_div(H, factor), w = ceil_div(W, factor);
    LevelOutput lo;
    lo.level = level;
    for (int t = 0; t < 2; ++t) {
      lo.flow[t] = crop_to(flow[t], h, w);
      lo.branch_image[t] = crop_to(dec.branch_image[t], h, w);
    }
    lo.fused_image = crop_to(dec.fused_image, h, w);
    out.levels.push_back(std::move(lo));

    if (level >= kDesiredLevel) {
      const auto cv = volumes(level, warped[0], warped[1]);
      for (int t = 0; t < 2; ++t) {
        const FlowEstimate e = estimator(level)->forward(pyr[t].levels[level], cv[t], flow[t]);
        if (trace) trace->coarse_flows[level][t] = e.coarse;
        flow[t] = apply_time_offset(e.upsampled, t + 1);
      }
    }
  }

  // Upsample the padded half-resolution image so the crop stays aligned.
  const long ph = last_fused.size(2) * 2, pw = last_fused.size(3) * 2;
  const Tensor up = F::interpolate(last_fused, F::InterpolateFuncOptions()
                                                   .size(std::vector<int64_t>{ph, pw})
                                                   .mode(torch::kBilinear)
                                                   .align_corners(false));
  out.final_image = crop_to(final_conv_(up), H, W);
  return out;
}

Tensor pad_to_multiple(const Tensor& image, int multiple) {
  const long h = image.size(2), w = image.size(3);
  const long ph = (multiple - h % multiple) % multiple;
  const long pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return image;
  const bool can_reflect = ph < h && pw < w;
  F::PadFuncOptions opts({0, pw, 0, ph});
  if (can_reflect) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return F::pad(image, opts);
}

std::uint64_t parameter_checksum(const torch::nn::Module& module) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (const auto& p : module.named_parameters()) {
    for (char ch : p.key()) hash = (hash ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
    const Tensor t = p.value().detach().contiguous();
    const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
    const std::size_t n = static_cast<std::size_t>(t.numel()) * t.element_size();
    for (std::size_t i = 0; i < n; ++i) hash = (hash ^ bytes[i]) * 1099511628211ULL;
  }
  return hash;
}

}  // namespace sunet::model
