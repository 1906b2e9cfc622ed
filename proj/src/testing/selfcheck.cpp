#include "sunet/testing/selfcheck.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sunet/checkpoint.hpp"
#include "sunet/losses.hpp"
#include "sunet/metrics.hpp"
#include "sunet/model.hpp"
#include "sunet/ops.hpp"
#include "sunet/rs_imaging.hpp"
#include "sunet/testing/oracles.hpp"
#include "sunet/trainer.hpp"

namespace sunet::testing {
namespace {

using torch::Tensor;

constexpr double kOracleTolerance = 1e-6;
constexpr double kGradTolerance = 1e-4;
constexpr double kFdStep = 1e-5;

class Results {
 public:
  explicit Results(std::string group) : group_(std::move(group)) {}

  void add(const std::string& property, bool passed, const std::string& detail = {}) {
    out_.push_back({group_, property, passed, detail});
  }

  // Runs `fn`, converting any exception into a failed property.
  template <typename Fn>
  void guard(const std::string& property, Fn&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      std::string what = e.what();
      what = what.substr(0, what.find('\n'));
      add(property, false, "exception: " + what);
    }
  }

  std::vector<CheckResult> take() { return std::move(out_); }

 private:
  std::string group_;
  std::vector<CheckResult> out_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

WarpFn warp_under_test(const SelfCheckOptions& o) {
  if (o.warp) return o.warp;
  return [](const Tensor& f, const Tensor& u) { return ops::forward_warp(f, u); };
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

std::vector<imaging::RsSample> tiny_samples(int n, int size, std::uint64_t seed) {
  imaging::DatasetConfig dc;
  dc.count = n;
  dc.height = size;
  dc.width = size;
  dc.seed = seed;
  dc.motion.min_speed = 2.0;
  dc.motion.max_speed = 4.0;
  std::vector<imaging::RsSample> s;
  for (int i = 0; i < n; ++i) s.push_back(imaging::generate_sample(dc, i).sample);
  return s;
}

std::filesystem::path scratch_dir(const SelfCheckOptions& o) {
  std::filesystem::path dir = o.scratch;
  if (dir.empty()) {
    dir = std::filesystem::temp_directory_path() /
          ("sunet-selfcheck-" + std::to_string(std::random_device{}()));
  }
  std::filesystem::create_directories(dir);
  return dir;
}

bool moments_equal(const train::AdamMoments& a, const train::AdamMoments& b) {
  auto same = [](const std::map<std::string, Tensor>& x, const std::map<std::string, Tensor>& y) {
    if (x.size() != y.size()) return false;
    for (const auto& [k, t] : x) {
      const auto it = y.find(k);
      if (it == y.end() || !torch::equal(t, it->second)) return false;
    }
    return true;
  };
  return same(a.exp_avg, b.exp_avg) && same(a.exp_avg_sq, b.exp_avg_sq);
}

}  // namespace

Tensor corrupted_forward_warp(const Tensor& features, const Tensor& flow) {
  Tensor shifted = flow.clone();
  {
    torch::NoGradGuard no_grad;
    shifted.select(1, 0).add_(1.0);
  }
  return ops::forward_warp(features, shifted);
}

std::vector<CheckResult> check_shapes(const SelfCheckOptions& o) {
  Results r("shapes");
  torch::manual_seed(o.seed);
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> mult(1, 5);
  const std::array<std::array<int, 5>, 3> schedules{{{128, 128, 96, 64, 32},
                                                     {64, 64, 48, 32, 16},
                                                     {32, 32, 24, 16, 8}}};
  const std::array<int, 5> channels{16, 32, 64, 96, 128};

  model::Sunet net(model::ModelConfig{}, o.seed);
  torch::NoGradGuard no_grad;

  r.guard("dense schedules", [&] {
    bool ok = true;
    std::string bad;
    for (int i = 0; i < 3; ++i) {
      const int level = 5 - i;
      const auto params = net->estimator(level)->named_parameters();
      for (int k = 0; k < 5; ++k) {
        const Tensor* w = params.find("dense" + std::to_string(k) + ".weight");
        if (!w || w->size(0) != schedules[i][k]) {
          ok = false;
          bad = "level " + std::to_string(level) + " block " + std::to_string(k);
        }
      }
    }
    r.add("dense schedules", ok, bad);
  });

  for (int trial = 0; trial < 3; ++trial) {
    const int H = 16 * mult(rng), W = 16 * mult(rng);
    const std::string tag = " " + std::to_string(H) + "x" + std::to_string(W);
    r.guard("forward" + tag, [&] {
      const Tensor a = torch::rand({1, 3, H, W});
      const Tensor b = torch::rand({1, 3, H, W});
      model::ForwardTrace trace;
      const model::MultiScaleOutput out = net->forward(a, b, &trace);

      bool pyr_ok = torch::equal(trace.pyramids[0].levels[0], a) && torch::equal(trace.pyramids[1].levels[0], b);
      for (int l = 1; l <= 5; ++l) {
        const Tensor& c = trace.pyramids[0].levels[l];
        const long s = 1L << (l - 1);
        pyr_ok = pyr_ok && c.defined() && c.size(1) == channels[l - 1] && c.size(2) == H / s &&
                 c.size(3) == W / s;
      }
      r.add("pyramid channels and sizes" + tag, pyr_ok);

      bool cv_ok = true;
      for (int l : {5, 4, 3}) {
        const long s = 1L << (l - 1);
        for (int t = 0; t < 2; ++t) {
          const Tensor& cv = trace.cost_volumes.at(l)[t];
          cv_ok = cv_ok && cv.size(1) == 81 && cv.size(2) == H / s && cv.size(3) == W / s;
          const Tensor& cf = trace.coarse_flows.at(l)[t];
          cv_ok = cv_ok && cf.size(1) == 2 && cf.size(2) == H / s && cf.size(3) == W / s;
        }
      }
      r.add("cost volume 81 channels" + tag, cv_ok);

      bool out_ok = out.levels.size() == 3;
      const std::array<int, 3> levels{4, 3, 2};
      for (std::size_t i = 0; out_ok && i < 3; ++i) {
        const auto& lo = out.levels[i];
        const long s = 1L << (levels[i] - 1);
        out_ok = lo.level == levels[i];
        for (int t = 0; t < 2; ++t) {
          out_ok = out_ok && lo.flow[t].sizes() == torch::IntArrayRef({1, 2, H / s, W / s}) &&
                   lo.branch_image[t].sizes() == torch::IntArrayRef({1, 3, H / s, W / s});
        }
        out_ok = out_ok && lo.fused_image.sizes() == torch::IntArrayRef({1, 3, H / s, W / s});
      }
      out_ok = out_ok && out.final_image.sizes() == torch::IntArrayRef({1, 3, H, W}) &&
               torch::isfinite(out.final_image).all().item<bool>();
      r.add("outputs at levels 4,3,2 and full resolution" + tag, out_ok);
    });
  }

  r.guard("unpadded input keeps its shape", [&] {
    const Tensor a = torch::rand({2, 3, 20, 36});
    const auto out = net->forward(a, a.flip({3}));
    const bool ok = out.final_image.sizes() == torch::IntArrayRef({2, 3, 20, 36}) &&
                    out.at(2).fused_image.size(2) == 10 && out.at(4).flow[0].size(3) == 5;
    r.add("unpadded input keeps its shape", ok);
  });

  r.guard("removed transitional level", [&] {
    model::ModelConfig cfg;
    cfg.level1_kernel = 0;
    cfg.search_range = 0;
    model::Sunet small(cfg, o.seed);
    model::ForwardTrace trace;
    const Tensor a = torch::rand({1, 3, 32, 32});
    small->forward(a, a, &trace);
    const auto& p = trace.pyramids[0].levels;
    const bool ok = !p[1].defined() && p[2].size(1) == 32 && p[2].size(2) == 16 &&
                    !trace.cost_volumes.at(5)[0].defined();
    r.add("removed transitional level", ok);
  });
  return r.take();
}

std::vector<CheckResult> check_operator_oracles(const SelfCheckOptions& o) {
  Results r("oracles");
  const WarpFn warp = warp_under_test(o);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(o.seed);
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> dim(2, 5), chan(1, 3), batch(1, 2), range(1, 2);
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

  r.guard("forward_warp matches oracle", [&] {
    double worst = 0.0, worst_mass = 0.0, worst_float = 0.0;
    for (int i = 0; i < o.oracle_instances; ++i) {
      const long N = batch(rng), C = chan(rng), H = dim(rng), W = dim(rng);
      const Tensor f = torch::randn({N, C, H, W}, gen, f64);
      const Tensor u = torch::rand({N, 2, H, W}, gen, f64) * 4.0 - 2.0;
      const Tensor ref = oracle_forward_warp(f, u);
      worst = std::max(worst, max_abs_diff(warp(f, u), ref));
      const Tensor ff = f.to(torch::kFloat32), uf = u.to(torch::kFloat32);
      worst_float = std::max(worst_float, max_abs_diff(warp(ff, uf), oracle_forward_warp(ff, uf)));
      worst_mass = std::max(worst_mass, max_abs_diff(ops::splat(f, u).weight, oracle_splat_weight(u)));
    }
    r.add("forward_warp matches oracle", worst < kOracleTolerance, "max abs diff " + fmt(worst));
    r.add("forward_warp float32 within 1e-4", worst_float < 1e-4, "max abs diff " + fmt(worst_float));
    r.add("splat mass matches oracle", worst_mass < kOracleTolerance, "max abs diff " + fmt(worst_mass));
  });

  r.guard("forward_warp special cases", [&] {
    // Exact in float32, where 1 + eps rounds to 1.
    const Tensor f = torch::randn({1, 2, 4, 5}, gen);
    const bool identity = torch::equal(warp(f, torch::zeros({1, 2, 4, 5})), f);
    Tensor one = torch::zeros({1, 1, 3, 3}, f64);
    one[0][0][1][0] = 2.5;
    Tensor shift = torch::zeros({1, 2, 3, 3}, f64);
    shift.select(1, 0).fill_(1.0);
    const Tensor moved = warp(one, shift);
    const bool integer = std::abs(moved[0][0][1][1].item<double>() - 2.5) < 1e-6 &&
                         moved[0][0][1][0].item<double>() == 0.0;
    r.add("zero flow is identity", identity);
    r.add("integer flow moves one column", integer);
  });

  r.guard("correlation matches oracle", [&] {
    double worst = 0.0;
    bool symmetric = true;
    for (int i = 0; i < o.oracle_instances; ++i) {
      const long N = batch(rng), C = chan(rng), H = dim(rng), W = dim(rng);
      const int d = range(rng);
      const Tensor a = torch::randn({N, C, H, W}, gen, f64);
      const Tensor b = torch::randn({N, C, H, W}, gen, f64);
      const Tensor ref = oracle_correlation(a, b, d);
      worst = std::max(worst, max_abs_diff(ops::correlation(a, b, d), ref));
      worst = std::max(worst, max_abs_diff(ops::correlation(a.to(torch::kFloat32), b.to(torch::kFloat32), d), ref));
      const Tensor act = torch::leaky_relu(ref, ops::kCostVolumeSlope);
      worst = std::max(worst, max_abs_diff(ops::cost_volume(a, b, d), act));

      const Tensor ab = ops::correlation(a.to(torch::kFloat32), b.to(torch::kFloat32), d);
      const Tensor ba = ops::correlation(b.to(torch::kFloat32), a.to(torch::kFloat32), d);
      auto x = ab.accessor<float, 4>();
      auto y = ba.accessor<float, 4>();
      const long side = 2 * d + 1;
      for (long n = 0; n < N; ++n) {
        for (long dy = -d; dy <= d; ++dy) {
          for (long dx = -d; dx <= d; ++dx) {
            for (long yy = 0; yy < H; ++yy) {
              for (long xx = 0; xx < W; ++xx) {
                if (yy + dy < 0 || yy + dy >= H || xx + dx < 0 || xx + dx >= W) continue;
                const float lhs = x[n][(dy + d) * side + (dx + d)][yy][xx];
                const float rhs = y[n][(d - dy) * side + (d - dx)][yy + dy][xx + dx];
                symmetric = symmetric && lhs == rhs;
              }
            }
          }
        }
      }
    }
    r.add("correlation matches oracle", worst < kOracleTolerance, "max abs diff " + fmt(worst));
    r.add("correlation symmetry is exact", symmetric);
  });

  r.guard("correlation special cases", [&] {
    const Tensor ones = torch::ones({1, 4, 3, 3}, f64);
    const Tensor cv = ops::correlation(ones, ones, 4);
    const bool center = torch::allclose(cv.select(1, 40), torch::ones({1, 3, 3}, f64));
    // Offset (4, 4) leaves a 3x3 map everywhere.
    const bool outside = cv.select(1, 80).abs().max().item<double>() == 0.0;
    r.add("all-ones center channel is 1", center && cv.size(1) == 81);
    r.add("fully out-of-bounds offsets are 0", outside);
  });
  return r.take();
}

std::vector<CheckResult> check_gradients(const SelfCheckOptions& o) {
  Results r("gradients");
  const WarpFn warp = warp_under_test(o);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(o.seed + 1);
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  const int k = o.gradient_samples;
  auto leaf = [&](torch::IntArrayRef shape, double lo = -1.0, double hi = 1.0) {
    return (torch::rand(shape, gen, f64) * (hi - lo) + lo).requires_grad_(true);
  };
  auto report = [&](const std::string& name, const GradCheckResult& g) {
    r.add(name, g.passed(kGradTolerance),
          std::to_string(g.checked) + " elements" +
              (g.refined ? ", " + std::to_string(g.refined) + " re-measured" : "") +
              (g.skipped ? ", " + std::to_string(g.skipped) + " non-differentiable replaced" : "") +
              (g.skip_limit_hit ? " (over the replacement limit)" : "") + ", max rel err " +
              fmt(g.max_relative_error) +
              (g.passed(kGradTolerance) ? "" : " at " + g.worst));
  };

  r.guard("forward_warp", [&] {
    const Tensor f = leaf({2, 3, 5, 5});
    const Tensor u = leaf({2, 2, 5, 5}, -1.7, 1.7);
    const Tensor w = torch::randn({2, 3, 5, 5}, gen, f64);
    report("forward_warp", check_gradients([&] { return (warp(f, u) * w).sum(); },
                                           {{"features", f}, {"flow", u}}, 4 * k, o.seed));
  });

  r.guard("correlation", [&] {
    const Tensor a = leaf({1, 3, 5, 5});
    const Tensor b = leaf({1, 3, 5, 5});
    const Tensor w = torch::randn({1, 25, 5, 5}, gen, f64);
    report("correlation", check_gradients([&] { return (ops::correlation(a, b, 2) * w).sum(); },
                                          {{"ref", a}, {"other", b}}, 4 * k, o.seed));
  });

  // Synthetic multi-scale outputs over a 16x16 frame.
  model::MultiScaleOutput out;
  std::vector<std::pair<std::string, Tensor>> leaves;
  out.final_image = leaf({1, 3, 16, 16}, 0.0, 1.0);
  leaves.emplace_back("final", out.final_image);
  for (int level : {4, 3, 2}) {
    model::LevelOutput lo;
    lo.level = level;
    const long s = 16 >> (level - 1);
    for (int t = 0; t < 2; ++t) {
      lo.flow[t] = leaf({1, 2, s, s}, -3.0, 3.0);
      lo.branch_image[t] = leaf({1, 3, s, s}, 0.0, 1.0);
      leaves.emplace_back("flow" + std::to_string(t + 1) + "@" + std::to_string(level), lo.flow[t]);
      leaves.emplace_back("branch" + std::to_string(t + 1) + "@" + std::to_string(level), lo.branch_image[t]);
    }
    lo.fused_image = leaf({1, 3, s, s}, 0.0, 1.0);
    leaves.emplace_back("fused@" + std::to_string(level), lo.fused_image);
    out.levels.push_back(lo);
  }
  const loss::SupervisionPyramid gt = loss::make_supervision(torch::rand({1, 3, 16, 16}, gen, f64));
  auto phi = loss::make_fallback_extractor();
  phi->to(torch::kFloat64);

  r.guard("reconstruction loss", [&] {
    report("reconstruction loss", check_gradients([&] { return loss::reconstruction_loss(out, gt); },
                                                  leaves, k, o.seed));
  });
  r.guard("perceptual loss", [&] {
    report("perceptual loss", check_gradients([&] { return loss::perceptual_loss(out, gt, *phi); },
                                              leaves, k, o.seed));
  });
  r.guard("consistency loss", [&] {
    report("consistency loss (gt)", check_gradients([&] { return loss::consistency_loss(out, gt); },
                                                    leaves, k, o.seed));
    report("consistency loss (self)",
           check_gradients([&] { return loss::consistency_loss(out, gt, loss::ConsistencyMode::kSelf); },
                           leaves, k, o.seed));
  });
  r.guard("smoothness loss", [&] {
    report("smoothness loss", check_gradients([&] { return loss::smoothness_loss(out); }, leaves, k, o.seed));
  });
  r.guard("total loss", [&] {
    report("total loss", check_gradients(
                             [&] { return loss::total_loss(out, gt, loss::LossWeights{}, *phi).total; },
                             leaves, k, o.seed));
  });

  r.guard("composed forward", [&] {
    model::Sunet net(model::ModelConfig{}, o.seed);
    net->to(torch::kFloat64);
    // The damped init leaves every flow within ~1e-3 px of zero, i.e. on the
    // splat kernel's kink. Check at a generic point with pixel-scale flows.
    {
      torch::NoGradGuard no_grad;
      for (const auto& p : net->named_parameters()) {
        if (p.key().rfind("flow", 0) != 0 || p.key().find(".predict.") == std::string::npos) continue;
        if (p.key().ends_with("bias"))
          p.value().copy_(torch::rand(p.value().sizes(), gen, f64) * 2.0 - 1.0);
        else
          p.value().mul_(30.0);
      }
    }
    const Tensor a = leaf({1, 3, 8, 8}, 0.0, 1.0);
    const Tensor b = leaf({1, 3, 8, 8}, 0.0, 1.0);
    std::vector<std::pair<std::string, Tensor>> inputs{{"frame1", a}, {"frame2", b}};
    std::vector<std::pair<std::string, Tensor>> params;
    for (const auto& p : net->named_parameters()) params.emplace_back(p.key(), p.value());

    // Fixed random projection of every output.
    std::vector<Tensor> proj;
    {
      torch::NoGradGuard no_grad;
      const auto probe = net->forward(a, b);
      for (const auto& lo : probe.levels) {
        for (int t = 0; t < 2; ++t) {
          proj.push_back(torch::randn(lo.flow[t].sizes(), gen, f64));
          proj.push_back(torch::randn(lo.branch_image[t].sizes(), gen, f64));
        }
        proj.push_back(torch::randn(lo.fused_image.sizes(), gen, f64));
      }
      proj.push_back(torch::randn(probe.final_image.sizes(), gen, f64));
    }
    auto fn = [&] {
      const auto y = net->forward(a, b);
      Tensor s = torch::zeros({}, f64);
      std::size_t i = 0;
      for (const auto& lo : y.levels) {
        for (int t = 0; t < 2; ++t) {
          s = s + (lo.flow[t] * proj[i++]).sum();
          s = s + (lo.branch_image[t] * proj[i++]).sum();
        }
        s = s + (lo.fused_image * proj[i++]).sum();
      }
      return s + (y.final_image * proj[i]).sum();
    };
    report("composed forward (inputs)", check_gradients(fn, inputs, 4 * k, o.seed));
    report("composed forward (parameters)", check_gradients(fn, params, std::max(1, k / 3), o.seed));
  });
  return r.take();
}

std::vector<CheckResult> check_geometry(const SelfCheckOptions& o) {
  Results r("geometry");
  using imaging::Motion;
  std::mt19937_64 rng(o.seed + 2);
  std::uniform_real_distribution<double> vel(-10.0, 10.0);
  const imaging::RsCamera cam{48, 64, 1.0};

  r.guard("translation flow closed form", [&] {
    bool exact = true, composed = true;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      const Motion m = Motion::translation(vel(rng), vel(rng));
      const FlowField f1 = imaging::gt_undistortion_flow(m, cam, 1);
      const FlowField f2 = imaging::gt_undistortion_flow(m, cam, 2);
      for (int y = 0; y < cam.height; ++y) {
        const double ratio = static_cast<double>(y) / cam.height;
        for (int x = 0; x < cam.width; ++x) {
          for (int c = 0; c < 2; ++c) {
            const double v = m.velocity[c];
            exact = exact && f1.at(y, x, c) == static_cast<float>(v * (1.0 - ratio)) &&
                    f2.at(y, x, c) == static_cast<float>(-(v * ratio));
          }
          for (int frame = 1; frame <= 2; ++frame) {
            const imaging::Vec2 p{static_cast<double>(x), static_cast<double>(y)};
            const auto q = m.image_point(m.scene_point(p, cam.row_time(frame, y)), cam.target_time());
            const FlowField& f = frame == 1 ? f1 : f2;
            worst = std::max({worst, std::abs(q[0] - p[0] - f.at(y, x, 0)),
                              std::abs(q[1] - p[1] - f.at(y, x, 1))});
          }
        }
      }
    }
    composed = worst < 1e-5;
    r.add("translation flow closed form", exact);
    r.add("flow equals composed motion model", composed, "max diff " + fmt(worst));
  });

  r.guard("resampled GS reproduces RS", [&] {
    bool ok = true;
    std::string detail;
    for (int i = 0; i < 4; ++i) {
      const Motion m = Motion::translation(vel(rng), vel(rng));
      const int margin = imaging::required_margin(m, cam) + 2;
      const imaging::SceneSpec spec{imaging::TextureKind::kMixed, cam.height + 2 * margin,
                                    cam.width + 2 * margin, rng()};
      const auto scene = imaging::make_scene_for(spec, m, cam);
      const auto pair = imaging::render_rs_pair(scene, m, cam);
      const Image gs = imaging::render_gs(scene, m, cam, cam.target_time());
      // Interpolation error reference: a half-pixel resample of the GS view
      // against the exactly rendered shifted view.
      const Motion shifted = Motion::translation(m.velocity[0] - 0.5, m.velocity[1] - 0.5);
      const Image gs_half = imaging::render_gs(scene, shifted, cam, cam.target_time());
      double ref_sum = 0.0, ref_max = 0.0;
      long ref_n = 0;
      for (int y = 0; y + 1 < cam.height; ++y) {
        for (int x = 0; x + 1 < cam.width; ++x) {
          for (int c = 0; c < 3; ++c) {
            const double e = std::abs(sample_bilinear(gs, x + 0.5, y + 0.5, c) - gs_half.at(y, x, c));
            ref_sum += e;
            ref_max = std::max(ref_max, e);
            ++ref_n;
          }
        }
      }
      const double ref_mean = ref_sum / ref_n;
      for (int frame = 1; frame <= 2; ++frame) {
        const Image& rs = frame == 1 ? pair.rs1 : pair.rs2;
        const FlowField f = imaging::gt_undistortion_flow(m, cam, frame);
        double sum = 0.0, mx = 0.0;
        long n = 0;
        for (int y = 0; y < cam.height; ++y) {
          for (int x = 0; x < cam.width; ++x) {
            const double qx = x + f.at(y, x, 0), qy = y + f.at(y, x, 1);
            if (qx < 0 || qy < 0 || qx > cam.width - 1 || qy > cam.height - 1) continue;
            for (int c = 0; c < 3; ++c) {
              const double e = std::abs(sample_bilinear(gs, qx, qy, c) - rs.at(y, x, c));
              sum += e;
              mx = std::max(mx, e);
              ++n;
            }
          }
        }
        const double mean = n ? sum / n : 0.0;
        if (!(mean <= 2.0 * ref_mean && mx <= 2.0 * ref_max)) {
          ok = false;
          detail = "mean " + fmt(mean) + " max " + fmt(mx) + " vs bound " + fmt(2 * ref_mean) +
                   "/" + fmt(2 * ref_max);
        } else if (detail.empty()) {
          detail = "mean " + fmt(mean) + " <= " + fmt(2 * ref_mean);
        }
      }
    }
    r.add("resampled GS reproduces RS", ok, detail);
  });

  r.guard("flow magnitude monotone in row", [&] {
    bool ok = true;
    for (int i = 0; i < 5; ++i) {
      const Motion m = Motion::translation(vel(rng) + 11.0, vel(rng));
      const FlowField f1 = imaging::gt_undistortion_flow(m, cam, 1);
      const FlowField f2 = imaging::gt_undistortion_flow(m, cam, 2);
      for (int y = 1; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; x += 7) {
          const double a0 = std::hypot(f1.at(y - 1, x, 0), f1.at(y - 1, x, 1));
          const double a1 = std::hypot(f1.at(y, x, 0), f1.at(y, x, 1));
          const double b0 = std::hypot(f2.at(y - 1, x, 0), f2.at(y - 1, x, 1));
          const double b1 = std::hypot(f2.at(y, x, 0), f2.at(y, x, 1));
          ok = ok && a1 < a0 && b1 > b0;
        }
      }
    }
    r.add("flow magnitude monotone in row", ok);
  });

  r.guard("translation mask matches row solve", [&] {
    bool ok = true;
    for (int i = 0; i < 6; ++i) {
      const Motion m = Motion::translation(vel(rng), vel(rng));
      const Mask mask = imaging::gt_visibility_mask(m, cam);
      const double vx = m.velocity[0], vy = m.velocity[1];
      for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
          // Scene point s = q - v; frame k images it on row r with
          // r = s_y + vy (k - 1 + r / H).
          const double sx = x - vx, sy = y - vy;
          bool visible = false;
          for (int k = 1; k <= 2; ++k) {
            const double r = (sy + vy * (k - 1)) / (1.0 - vy / cam.height);
            const double px = sx + vx * (k - 1 + r / cam.height);
            visible = visible || (r >= 0 && r <= cam.height - 1 && px >= 0 && px <= cam.width - 1);
          }
          ok = ok && (mask.at(y, x) == 1) == visible;
        }
      }
    }
    r.add("translation mask matches row solve", ok);
    const Mask horizontal = imaging::gt_visibility_mask(Motion::translation(9.0, 0.0), cam);
    bool all = true;
    for (auto v : horizontal.data()) all = all && v == 1;
    r.add("horizontal translation is fully visible", all);
  });
  return r.take();
}

std::vector<CheckResult> check_symmetry(const SelfCheckOptions& o) {
  Results r("symmetry");
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(o.seed + 3);
  model::Sunet net(model::ModelConfig{}, o.seed);
  r.guard("swap equivariance", [&] {
    const Tensor a = torch::rand({2, 3, 32, 48}, gen);
    const Tensor b = torch::rand({2, 3, 32, 48}, gen);
    model::ForwardTrace ta, tb;
    const auto x = net->forward(a, b, &ta);
    const auto y = net->forward(b, a, &tb);
    bool flows = true, images = true, volumes = true;
    for (int level : {4, 3, 2}) {
      const auto& p = x.at(level);
      const auto& q = y.at(level);
      for (int t = 0; t < 2; ++t) {
        flows = flows && torch::equal(p.flow[t], q.flow[1 - t]);
        images = images && torch::equal(p.branch_image[t], q.branch_image[1 - t]);
      }
    }
    for (int level : {5, 4, 3}) {
      for (int t = 0; t < 2; ++t) {
        volumes = volumes && torch::equal(ta.cost_volumes.at(level)[t], tb.cost_volumes.at(level)[1 - t]);
      }
    }
    r.add("swapped inputs swap flows", flows);
    r.add("swapped inputs swap branch images", images);
    r.add("swapped inputs swap cost volumes", volumes);
  });
  r.guard("decoder branches share weights", [&] {
    const long ch = model::pyramid_channels(4);
    const Tensor c = torch::rand({1, ch, 8, 8}, gen);
    const auto d = net->decoder(4)->forward(c, c, Tensor());
    r.add("decoder branches share weights", torch::equal(d.branch_image[0], d.branch_image[1]));
    const Tensor e = torch::rand({1, ch, 8, 8}, gen);
    const auto p = net->decoder(4)->forward(c, e, Tensor());
    const auto q = net->decoder(4)->forward(e, c, Tensor());
    r.add("decoder swap exchanges branch images",
          torch::equal(p.branch_image[0], q.branch_image[1]) && torch::equal(p.branch_image[1], q.branch_image[0]));
  });
  return r.take();
}

std::vector<CheckResult> check_metrics(const SelfCheckOptions& o) {
  Results r("metrics");
  std::mt19937_64 rng(o.seed + 4);
  std::uniform_real_distribution<double> unit(0.0, 0.9);
  r.guard("psnr of a 0.1 offset", [&] {
    Raster<double> ref(24, 32, 3), pred(24, 32, 3);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ref.data()[i] = unit(rng);
      pred.data()[i] = ref.data()[i] + 0.1;
    }
    const double p = metrics::psnr(pred, ref);
    r.add("psnr of a 0.1 offset is 20 dB", std::abs(p - 20.0) < 1e-9, "psnr " + std::to_string(p));
  });
  r.guard("ssim and masks", [&] {
    Image a(24, 32, 3), b(24, 32, 3);
    for (auto& v : a.data()) v = static_cast<float>(unit(rng));
    for (auto& v : b.data()) v = static_cast<float>(unit(rng));
    r.add("ssim(x, x) = 1", std::abs(metrics::ssim(a, a) - 1.0) < 1e-12);
    const Mask ones = make_mask(24, 32, 1);
    r.add("all-ones mask equals unmasked", metrics::psnr(a, b, &ones) == metrics::psnr(a, b));
    r.add("identical images give infinite psnr", std::isinf(metrics::psnr(a, a)));
    Mask half = make_mask(24, 32, 0);
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 32; ++x) half.at(y, x) = 1;
    }
    r.add("masked psnr matches oracle",
          std::abs(metrics::psnr(a, b, &half) - oracle_psnr(a, b, &half)) < 1e-9);
    Image s(11, 11, 3), t(11, 11, 3);
    for (auto& v : s.data()) v = static_cast<float>(unit(rng));
    for (auto& v : t.data()) v = static_cast<float>(unit(rng));
    r.add("ssim matches single-window oracle",
          std::abs(metrics::ssim(s, t) - oracle_ssim_single_window(s, t)) < 1e-9);
  });
  return r.take();
}

std::vector<CheckResult> check_persistence(const SelfCheckOptions& o) {
  Results r("persistence");
  const auto dir = scratch_dir(o);
  const auto samples = tiny_samples(4, 32, o.seed);
  const train::Batch batch1 = train::make_batch({samples[0], samples[1]});
  const train::Batch batch2 = train::make_batch({samples[2], samples[3]});
  auto phi = loss::make_fallback_extractor();
  train::TrainConfig cfg;
  cfg.seed = o.seed;
  cfg.learning_rate = 1e-3;
  auto step_n = [&](train::TrainState& s, int n) {
    for (int i = 0; i < n; ++i) train::train_step(s, (s.step % 2 == 0) ? batch1 : batch2, *phi);
  };

  r.guard("fixed-seed runs are bit-identical", [&] {
    train::TrainState a = train::init_state(cfg), b = train::init_state(cfg);
    const bool init = model::parameter_checksum(*a.net) == model::parameter_checksum(*b.net);
    step_n(a, 3);
    step_n(b, 3);
    const bool trained = model::parameter_checksum(*a.net) == model::parameter_checksum(*b.net) &&
                         moments_equal(a.moments, b.moments);
    r.add("fixed-seed runs are bit-identical", init && trained);
  });

  r.guard("checkpoint round trip", [&] {
    train::TrainState a = train::init_state(cfg);
    step_n(a, 2);
    train::save_checkpoint(a, dir / "roundtrip.ckpt");
    const train::TrainState b = train::load_checkpoint(dir / "roundtrip.ckpt");
    const bool ok = model::parameter_checksum(*a.net) == model::parameter_checksum(*b.net) &&
                    moments_equal(a.moments, b.moments) && a.step == b.step && a.rng == b.rng;
    r.add("checkpoint round trip is bit-exact", ok);
    ckpt::save_model(dir / "model.ckpt", *a.net);
    const model::Sunet m = ckpt::load_model(dir / "model.ckpt");
    r.add("model archive round trip is bit-exact",
          model::parameter_checksum(*m) == model::parameter_checksum(*a.net));
  });

  r.guard("resume matches uninterrupted run", [&] {
    train::TrainState a = train::init_state(cfg);
    step_n(a, 3);
    train::TrainState b = train::init_state(cfg);
    step_n(b, 1);
    train::save_checkpoint(b, dir / "resume.ckpt");
    train::TrainState c = train::load_checkpoint(dir / "resume.ckpt", cfg);
    step_n(c, 2);
    const bool ok = model::parameter_checksum(*a.net) == model::parameter_checksum(*c.net) &&
                    moments_equal(a.moments, c.moments);
    r.add("resume matches uninterrupted run", ok);
  });

  r.guard("architecture mismatch is rejected", [&] {
    train::TrainConfig other = cfg;
    other.arch.search_range = 2;
    bool rejected = false;
    try {
      train::load_checkpoint(dir / "roundtrip.ckpt", other);
    } catch (const ckpt::CheckpointError&) {
      rejected = true;
    }
    bool model_rejected = false;
    try {
      model::Sunet wrong(other.arch);
      ckpt::load_model_parameters(*wrong, ckpt::read_archive(dir / "model.ckpt"));
    } catch (const ckpt::CheckpointError&) {
      model_rejected = true;
    }
    r.add("architecture mismatch is rejected", rejected && model_rejected);
  });
  if (o.scratch.empty()) std::filesystem::remove_all(dir);
  return r.take();
}

const std::vector<std::pair<std::string, CheckGroup>>& check_groups() {
  static const std::vector<std::pair<std::string, CheckGroup>> groups{
      {"shapes", &check_shapes},     {"oracles", &check_operator_oracles},
      {"gradients", &check_gradients}, {"geometry", &check_geometry},
      {"symmetry", &check_symmetry}, {"metrics", &check_metrics},
      {"persistence", &check_persistence}};
  return groups;
}

std::vector<CheckResult> run_self_checks(const SelfCheckOptions& options,
                                         const std::vector<std::string>& only) {
  for (const std::string& name : only) {
    const auto& g = check_groups();
    if (std::none_of(g.begin(), g.end(), [&](const auto& e) { return e.first == name; })) {
      throw std::invalid_argument("unknown check group '" + name + "'");
    }
  }
  std::vector<CheckResult> all;
  for (const auto& [name, group] : check_groups()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    auto part = group(options);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return !results.empty() &&
         std::all_of(results.begin(), results.end(), [](const CheckResult& c) { return c.passed; });
}

}  // namespace sunet::testing
