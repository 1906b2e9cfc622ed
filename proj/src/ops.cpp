#include "sunet/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sunet::ops {
namespace {

using torch::Tensor;
using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dim() != 4 || b.dim() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected 4-D N x C x H x W tensors");
  }
  if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
    throw std::invalid_argument(std::string(op) + ": spatial/batch shapes differ");
  }
  if (a.scalar_type() != b.scalar_type()) {
    throw std::invalid_argument(std::string(op) + ": dtype mismatch");
  }
  if (!a.device().is_cpu() || !b.device().is_cpu()) {
    throw std::invalid_argument(std::string(op) + ": CPU tensors only");
  }
}

void check_warp_args(const Tensor& features, const Tensor& flow) {
  check_pair(features, flow, "forward_warp");
  if (flow.size(1) != 2) throw std::invalid_argument("forward_warp: flow must have 2 channels");
  if (!torch::isfinite(flow).all().item<bool>()) {
    throw std::invalid_argument("forward_warp: flow contains non-finite values");
  }
}

// Bilinear footprint of one splatted source pixel.
template <typename T>
struct Footprint {
  long x0, y0;
  T ax, ay;
  // corner j: (x0 + (j & 1), y0 + (j >> 1))
  T weight(int j) const {
    const T wx = (j & 1) ? ax : T(1) - ax;
    const T wy = (j >> 1) ? ay : T(1) - ay;
    return wx * wy;
  }
  T dweight_dx(int j) const {
    const T wy = (j >> 1) ? ay : T(1) - ay;
    return (j & 1) ? wy : -wy;
  }
  T dweight_dy(int j) const {
    const T wx = (j & 1) ? ax : T(1) - ax;
    return (j >> 1) ? wx : -wx;
  }
};

template <typename T>
Footprint<T> footprint(long x, long y, T u, T v) {
  const T tx = static_cast<T>(x) + u;
  const T ty = static_cast<T>(y) + v;
  const T fx = std::floor(tx);
  const T fy = std::floor(ty);
  return {static_cast<long>(fx), static_cast<long>(fy), tx - fx, ty - fy};
}

template <typename T>
void splat_kernel(const Tensor& features, const Tensor& flow, Tensor& acc, Tensor& wsum) {
  const long N = features.size(0), C = features.size(1), H = features.size(2),
             W = features.size(3);
  const long plane = H * W;
  const T* f = features.data_ptr<T>();
  const T* fl = flow.data_ptr<T>();
  T* a = acc.data_ptr<T>();
  T* ws = wsum.data_ptr<T>();
  for (long n = 0; n < N; ++n) {
    const T* fn = f + n * C * plane;
    const T* un = fl + n * 2 * plane;
    const T* vn = un + plane;
    T* an = a + n * C * plane;
    T* wn = ws + n * plane;
    for (long y = 0; y < H; ++y) {
      for (long x = 0; x < W; ++x) {
        const long s = y * W + x;
        const auto fp = footprint<T>(x, y, un[s], vn[s]);
        for (int j = 0; j < 4; ++j) {
          const long tx = fp.x0 + (j & 1), ty = fp.y0 + (j >> 1);
          if (tx < 0 || ty < 0 || tx >= W || ty >= H) continue;
          const T w = fp.weight(j);
          const long t = ty * W + tx;
          wn[t] += w;
          for (long c = 0; c < C; ++c) an[c * plane + t] += w * fn[c * plane + s];
        }
      }
    }
  }
}

// grad_out is dL/d(out); out = acc / (wsum + eps).
template <typename T>
void warp_backward_kernel(const Tensor& features, const Tensor& flow, const Tensor& out,
                          const Tensor& wsum, const Tensor& grad_out, Tensor& grad_features,
                          Tensor& grad_flow) {
  const long N = features.size(0), C = features.size(1), H = features.size(2),
             W = features.size(3);
  const long plane = H * W;
  const T eps = static_cast<T>(kSplatEpsilon);
  const T* f = features.data_ptr<T>();
  const T* fl = flow.data_ptr<T>();
  const T* o = out.data_ptr<T>();
  const T* ws = wsum.data_ptr<T>();
  const T* g = grad_out.data_ptr<T>();
  T* gf = grad_features.data_ptr<T>();
  T* gfl = grad_flow.data_ptr<T>();
  std::vector<T> g_acc(static_cast<std::size_t>(C * plane));
  std::vector<T> g_w(static_cast<std::size_t>(plane));
  for (long n = 0; n < N; ++n) {
    const long off = n * C * plane;
    // Gradients with respect to the accumulators of each target cell.
    for (long t = 0; t < plane; ++t) {
      const T inv = T(1) / (ws[n * plane + t] + eps);
      T gw = 0;
      for (long c = 0; c < C; ++c) {
        const T gc = g[off + c * plane + t];
        g_acc[c * plane + t] = gc * inv;
        gw -= gc * o[off + c * plane + t] * inv;
      }
      g_w[t] = gw;
    }
    const T* un = fl + n * 2 * plane;
    const T* vn = un + plane;
    T* gun = gfl + n * 2 * plane;
    T* gvn = gun + plane;
    for (long y = 0; y < H; ++y) {
      for (long x = 0; x < W; ++x) {
        const long s = y * W + x;
        const auto fp = footprint<T>(x, y, un[s], vn[s]);
        T du = 0, dv = 0;
        for (int j = 0; j < 4; ++j) {
          const long tx = fp.x0 + (j & 1), ty = fp.y0 + (j >> 1);
          if (tx < 0 || ty < 0 || tx >= W || ty >= H) continue;
          const long t = ty * W + tx;
          const T w = fp.weight(j);
          T dw = g_w[t];
          for (long c = 0; c < C; ++c) {
            const T ga = g_acc[c * plane + t];
            gf[off + c * plane + s] += w * ga;
            dw += f[off + c * plane + s] * ga;
          }
          du += dw * fp.dweight_dx(j);
          dv += dw * fp.dweight_dy(j);
        }
        gun[s] = du;
        gvn[s] = dv;
      }
    }
  }
}

class ForwardWarpFunction : public torch::autograd::Function<ForwardWarpFunction> {
 public:
  static Tensor forward(AutogradContext* ctx, const Tensor& features_in, const Tensor& flow_in) {
    const Tensor features = features_in.contiguous();
    const Tensor flow = flow_in.contiguous();
    Splat sp = splat(features, flow);
    Tensor out = sp.accumulated / (sp.weight + kSplatEpsilon);
    ctx->save_for_backward({features, flow, out, sp.weight});
    return out;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
    const auto saved = ctx->get_saved_variables();
    const Tensor& features = saved[0];
    const Tensor& flow = saved[1];
    const Tensor grad_out = grads[0].contiguous();
    Tensor grad_features = torch::zeros_like(features);
    Tensor grad_flow = torch::zeros_like(flow);
    AT_DISPATCH_FLOATING_TYPES(features.scalar_type(), "forward_warp_backward", [&] {
      warp_backward_kernel<scalar_t>(features, flow, saved[2], saved[3], grad_out, grad_features,
                                     grad_flow);
    });
    return {grad_features, grad_flow};
  }
};

template <typename T>
void correlation_kernel(const Tensor& ref, const Tensor& other, int d, Tensor& out) {
  const long N = ref.size(0), C = ref.size(1), H = ref.size(2), W = ref.size(3);
  const long plane = H * W;
  const int span = 2 * d + 1;
  const T scale = T(1) / static_cast<T>(C);
  const T* r = ref.data_ptr<T>();
  const T* q = other.data_ptr<T>();
  T* o = out.data_ptr<T>();
  for (long n = 0; n < N; ++n) {
    const T* rn = r + n * C * plane;
    const T* qn = q + n * C * plane;
    T* on = o + n * span * span * plane;
    for (int dy = -d; dy <= d; ++dy) {
      for (int dx = -d; dx <= d; ++dx) {
        T* oc = on + ((dy + d) * span + (dx + d)) * plane;
        for (long y = 0; y < H; ++y) {
          const long yy = y + dy;
          if (yy < 0 || yy >= H) continue;
          for (long x = 0; x < W; ++x) {
            const long xx = x + dx;
            if (xx < 0 || xx >= W) continue;
            T acc = 0;
            for (long c = 0; c < C; ++c) acc += rn[c * plane + y * W + x] * qn[c * plane + yy * W + xx];
            oc[y * W + x] = acc * scale;
          }
        }
      }
    }
  }
}

template <typename T>
void correlation_backward_kernel(const Tensor& ref, const Tensor& other, int d,
                                 const Tensor& grad_out, Tensor& grad_ref, Tensor& grad_other) {
  const long N = ref.size(0), C = ref.size(1), H = ref.size(2), W = ref.size(3);
  const long plane = H * W;
  const int span = 2 * d + 1;
  const T scale = T(1) / static_cast<T>(C);
  const T* r = ref.data_ptr<T>();
  const T* q = other.data_ptr<T>();
  const T* g = grad_out.data_ptr<T>();
  T* gr = grad_ref.data_ptr<T>();
  T* gq = grad_other.data_ptr<T>();
  for (long n = 0; n < N; ++n) {
    const long off = n * C * plane;
    const T* gn = g + n * span * span * plane;
    for (int dy = -d; dy <= d; ++dy) {
      for (int dx = -d; dx <= d; ++dx) {
        const T* gc = gn + ((dy + d) * span + (dx + d)) * plane;
        for (long y = 0; y < H; ++y) {
          const long yy = y + dy;
          if (yy < 0 || yy >= H) continue;
          for (long x = 0; x < W; ++x) {
            const long xx = x + dx;
            if (xx < 0 || xx >= W) continue;
            const T go = gc[y * W + x] * scale;
            if (go == T(0)) continue;
            for (long c = 0; c < C; ++c) {
              const long i = off + c * plane + y * W + x;
              const long k = off + c * plane + yy * W + xx;
              gr[i] += go * q[k];
              gq[k] += go * r[i];
            }
          }
        }
      }
    }
  }
}

class CorrelationFunction : public torch::autograd::Function<CorrelationFunction> {
 public:
  static Tensor forward(AutogradContext* ctx, const Tensor& ref_in, const Tensor& other_in,
                        int64_t d) {
    const Tensor ref = ref_in.contiguous();
    const Tensor other = other_in.contiguous();
    const int span = 2 * static_cast<int>(d) + 1;
    Tensor out = torch::zeros({ref.size(0), span * span, ref.size(2), ref.size(3)}, ref.options());
    AT_DISPATCH_FLOATING_TYPES(ref.scalar_type(), "correlation_forward", [&] {
      correlation_kernel<scalar_t>(ref, other, static_cast<int>(d), out);
    });
    ctx->save_for_backward({ref, other});
    ctx->saved_data["d"] = d;
    return out;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grads) {
    const auto saved = ctx->get_saved_variables();
    const int d = static_cast<int>(ctx->saved_data["d"].toInt());
    const Tensor grad_out = grads[0].contiguous();
    Tensor grad_ref = torch::zeros_like(saved[0]);
    Tensor grad_other = torch::zeros_like(saved[1]);
    AT_DISPATCH_FLOATING_TYPES(saved[0].scalar_type(), "correlation_backward", [&] {
      correlation_backward_kernel<scalar_t>(saved[0], saved[1], d, grad_out, grad_ref, grad_other);
    });
    return {grad_ref, grad_other, Tensor()};
  }
};

}  // namespace

Splat splat(const torch::Tensor& features_in, const torch::Tensor& flow_in) {
  check_warp_args(features_in, flow_in);
  torch::NoGradGuard no_grad;
  const Tensor features = features_in.contiguous();
  const Tensor flow = flow_in.contiguous();
  Tensor acc = torch::zeros_like(features);
  Tensor wsum = torch::zeros({features.size(0), 1, features.size(2), features.size(3)},
                             features.options());
  AT_DISPATCH_FLOATING_TYPES(features.scalar_type(), "splat", [&] {
    splat_kernel<scalar_t>(features, flow, acc, wsum);
  });
  return {acc, wsum};
}

torch::Tensor forward_warp(const torch::Tensor& features, const torch::Tensor& flow) {
  check_warp_args(features, flow);
  return ForwardWarpFunction::apply(features, flow);
}

torch::Tensor correlation(const torch::Tensor& ref, const torch::Tensor& other, int d) {
  check_pair(ref, other, "correlation");
  if (ref.size(1) != other.size(1)) {
    throw std::invalid_argument("correlation: channel counts differ");
  }
  if (d < 0) throw std::invalid_argument("correlation: search range must be >= 0");
  return CorrelationFunction::apply(ref, other, static_cast<int64_t>(d));
}

torch::Tensor cost_volume(const torch::Tensor& ref, const torch::Tensor& other, int d) {
  return torch::leaky_relu(correlation(ref, other, d), kCostVolumeSlope);
}

}  // namespace sunet::ops
