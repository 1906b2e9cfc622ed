#pragma once

// Parameter-free differentiable operators used by the network: bilinear
// forward warping (splatting) and the local correlation cost volume. Both run
// on contiguous CPU tensors in float or double and provide analytic backward
// passes.

#include <torch/torch.h>

namespace sunet::ops {

inline constexpr double kSplatEpsilon = 1e-8;
inline constexpr double kCostVolumeSlope = 0.1;

struct Splat {
  torch::Tensor accumulated;  // N x C x H x W, sum of weighted features
  torch::Tensor weight;       // N x 1 x H x W, sum of bilinear weights
};

/// Scatters every source feature vector to (x, y) + flow(x, y) with bilinear
/// weights on the four surrounding cells; cells outside the map are dropped.
/// Not differentiable; exposed for inspection of the accumulated mass.
Splat splat(const torch::Tensor& features, const torch::Tensor& flow);

/// accumulated / (weight + eps). Cells that receive no mass come out zero.
/// features: N x C x H x W, flow: N x 2 x H x W holding (dx, dy) in pixels.
/// Throws std::invalid_argument on shape mismatch or non-finite flow.
torch::Tensor forward_warp(const torch::Tensor& features, const torch::Tensor& flow);

/// Number of cost-volume channels for search range d.
constexpr int cost_volume_channels(int d) { return (2 * d + 1) * (2 * d + 1); }

/// out[n, (dy+d)(2d+1) + (dx+d), y, x] = <ref(y,x), other(y+dy, x+dx)> / C with
/// zero contribution where the displaced position leaves the map.
torch::Tensor correlation(const torch::Tensor& ref, const torch::Tensor& other, int d);

/// correlation followed by leaky ReLU (slope 0.1).
torch::Tensor cost_volume(const torch::Tensor& ref, const torch::Tensor& other, int d);

}  // namespace sunet::ops
