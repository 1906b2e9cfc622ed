#include "sunet/rs_imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "sunet/image_io.hpp"

namespace sunet::imaging {
namespace {

using json = nlohmann::json;

std::mt19937_64 index_rng(std::uint64_t seed, int index, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), stream};
  return std::mt19937_64(seq);
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (float& v : k) v = static_cast<float>(v / sum);
  return k;
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

// Separable Gaussian with mirrored borders, applied per channel.
Image blur(const Image& src, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  Image tmp(src.height(), src.width(), src.channels());
  Image out(src.height(), src.width(), src.channels());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      for (int c = 0; c < src.channels(); ++c) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * src.at(y, reflect(x + i, src.width()), c);
        tmp.at(y, x, c) = acc;
      }
    }
  }
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      for (int c = 0; c < src.channels(); ++c) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(reflect(y + i, src.height()), x, c);
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

// Rescales each channel to zero mean, unit standard deviation.
void standardize(Image& img) {
  const int n = img.height() * img.width();
  for (int c = 0; c < img.channels(); ++c) {
    double mean = 0.0, sq = 0.0;
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) mean += img.at(y, x, c);
    mean /= n;
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) sq += std::pow(img.at(y, x, c) - mean, 2);
    const double sd = std::sqrt(sq / n) + 1e-12;
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        img.at(y, x, c) = static_cast<float>((img.at(y, x, c) - mean) / sd);
  }
}

Image checkerboard(int h, int w, std::mt19937_64& rng) {
  const int cell = std::max(4, std::min(h, w) / 12);
  const int rows = h / cell + 1;
  const int cols = w / cell + 1;
  std::uniform_real_distribution<float> color(0.1f, 0.9f);
  std::vector<std::array<float, 3>> palette(static_cast<std::size_t>(rows) * cols);
  for (auto& p : palette) p = {color(rng), color(rng), color(rng)};
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int cy = y / cell, cx = x / cell;
      const auto& p = palette[static_cast<std::size_t>(cy) * cols + cx];
      // Alternate bright/dark cells so edges are strong in every channel.
      const float parity = ((cx + cy) % 2 == 0) ? 1.0f : 0.35f;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = p[c] * parity;
    }
  }
  return blur(img, 0.8);
}

Image filtered_noise(int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  Image white(h, w, 3);
  for (float& v : white.data()) v = gauss(rng);
  Image fine = blur(white, 1.5);
  Image coarse = blur(white, 5.0);
  standardize(fine);
  standardize(coarse);
  Image img(h, w, 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float z = 0.6f * fine.data()[i] + 0.4f * coarse.data()[i];
    img.data()[i] = std::clamp(0.5f + 0.22f * z, 0.0f, 1.0f);
  }
  return img;
}

struct FrameOrigin {
  int x;
  int y;
};

FrameOrigin frame_origin(const SceneTexture& scene, const RsCamera& cam) {
  if (scene.width() < cam.width || scene.height() < cam.height) {
    throw ExtentError("scene " + std::to_string(scene.width()) + "x" +
                      std::to_string(scene.height()) + " is smaller than the camera frame " +
                      std::to_string(cam.width) + "x" + std::to_string(cam.height));
  }
  return {(scene.width() - cam.width) / 2, (scene.height() - cam.height) / 2};
}

// Shared by the RS and GS renderers so the row-time law holds exactly.
void render_row(const SceneTexture& scene, const Motion& motion, const RsCamera& cam,
                FrameOrigin origin, int y, double t, Image& out) {
  for (int x = 0; x < cam.width; ++x) {
    const Vec2 s = motion.scene_point({static_cast<double>(x), static_cast<double>(y)}, t,
                                      cam.frame_time);
    const double sx = s[0] + origin.x;
    const double sy = s[1] + origin.y;
    try {
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<float>(sample_bilinear(scene.pixels, sx, sy, c));
      }
    } catch (const std::out_of_range&) {
      std::ostringstream msg;
      msg << "pixel (" << x << ", " << y << ") at t=" << t << " samples scene point (" << sx
          << ", " << sy << ") outside the " << scene.width() << "x" << scene.height()
          << " texture";
      throw ExtentError(msg.str());
    }
  }
}

void require_oracle(const Motion& motion, const char* what) {
  if (!motion.has_closed_form()) {
    throw UnsupportedOracle(std::string(what) + " has no closed form for " +
                            to_string(motion.kind) + " motion");
  }
}

json motion_to_json(const Motion& m) {
  return json{{"kind", to_string(m.kind)},
              {"velocity", {m.velocity[0], m.velocity[1]}},
              {"angular_rate", m.angular_rate},
              {"center", {m.center[0], m.center[1]}},
              {"affine_rate", m.affine_rate}};
}

Motion motion_from_json(const json& j) {
  Motion m;
  m.kind = motion_kind_from_string(j.at("kind").get<std::string>());
  m.velocity = {j.at("velocity").at(0).get<double>(), j.at("velocity").at(1).get<double>()};
  m.angular_rate = j.at("angular_rate").get<double>();
  m.center = {j.at("center").at(0).get<double>(), j.at("center").at(1).get<double>()};
  if (j.contains("affine_rate")) m.affine_rate = j.at("affine_rate").get<std::array<double, 4>>();
  return m;
}

std::string sample_dir_name(int index) {
  std::ostringstream s;
  s << "sample_" << std::setw(5) << std::setfill('0') << index;
  return s.str();
}

}  // namespace

void RsCamera::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("camera size must be positive");
  if (!(frame_time > 0.0)) throw std::invalid_argument("frame_time must be positive");
}

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::kStatic: return "static";
    case MotionKind::kTranslation: return "translation";
    case MotionKind::kRotation: return "rotation";
    case MotionKind::kAffine: return "affine";
  }
  return "unknown";
}

MotionKind motion_kind_from_string(const std::string& name) {
  if (name == "static") return MotionKind::kStatic;
  if (name == "translation") return MotionKind::kTranslation;
  if (name == "rotation") return MotionKind::kRotation;
  if (name == "affine") return MotionKind::kAffine;
  throw std::invalid_argument("unknown motion kind '" + name + "'");
}

Motion Motion::translation(double vx, double vy) {
  Motion m;
  m.kind = MotionKind::kTranslation;
  m.velocity = {vx, vy};
  return m;
}

Motion Motion::rotation(double rate, Vec2 pivot) {
  Motion m;
  m.kind = MotionKind::kRotation;
  m.angular_rate = rate;
  m.center = pivot;
  return m;
}

Vec2 Motion::image_point(Vec2 s, double t, double tau) const {
  const double a = t / tau;
  switch (kind) {
    case MotionKind::kStatic:
      return s;
    case MotionKind::kTranslation:
      return {s[0] + velocity[0] * a, s[1] + velocity[1] * a};
    case MotionKind::kRotation: {
      const double th = angular_rate * a;
      const double dx = s[0] - center[0], dy = s[1] - center[1];
      return {center[0] + std::cos(th) * dx - std::sin(th) * dy,
              center[1] + std::sin(th) * dx + std::cos(th) * dy};
    }
    case MotionKind::kAffine: {
      const double dx = s[0] - center[0], dy = s[1] - center[1];
      const auto& A = affine_rate;
      return {center[0] + dx + a * (A[0] * dx + A[1] * dy) + a * velocity[0],
              center[1] + dy + a * (A[2] * dx + A[3] * dy) + a * velocity[1]};
    }
  }
  return s;
}

Vec2 Motion::scene_point(Vec2 p, double t, double tau) const {
  const double a = t / tau;
  switch (kind) {
    case MotionKind::kStatic:
      return p;
    case MotionKind::kTranslation:
      return {p[0] - velocity[0] * a, p[1] - velocity[1] * a};
    case MotionKind::kRotation: {
      const double th = -angular_rate * a;
      const double dx = p[0] - center[0], dy = p[1] - center[1];
      return {center[0] + std::cos(th) * dx - std::sin(th) * dy,
              center[1] + std::sin(th) * dx + std::cos(th) * dy};
    }
    case MotionKind::kAffine: {
      const auto& A = affine_rate;
      const double m00 = 1 + a * A[0], m01 = a * A[1], m10 = a * A[2], m11 = 1 + a * A[3];
      const double det = m00 * m11 - m01 * m10;
      if (std::abs(det) < 1e-12) throw std::domain_error("affine motion is singular at t");
      const double dx = p[0] - center[0] - a * velocity[0];
      const double dy = p[1] - center[1] - a * velocity[1];
      return {center[0] + (m11 * dx - m01 * dy) / det, center[1] + (-m10 * dx + m00 * dy) / det};
    }
  }
  return p;
}

double Motion::max_displacement(const RsCamera& cam) const {
  // Displacement is affine in p for every kind at fixed t, so the corners bound
  // it; t is swept densely over both frames.
  const std::array<Vec2, 4> corners{Vec2{0.0, 0.0}, Vec2{cam.width - 1.0, 0.0},
                                    Vec2{0.0, cam.height - 1.0},
                                    Vec2{cam.width - 1.0, cam.height - 1.0}};
  double best = 0.0;
  constexpr int kSteps = 512;
  for (int i = 0; i <= kSteps; ++i) {
    const double t = 2.0 * cam.frame_time * i / kSteps;
    for (const auto& p : corners) {
      const Vec2 s = scene_point(p, t, cam.frame_time);
      best = std::max(best, std::hypot(s[0] - p[0], s[1] - p[1]));
    }
  }
  return best;
}

std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::kCheckerboard: return "checkerboard";
    case TextureKind::kNoise: return "noise";
    case TextureKind::kMixed: return "mixed";
  }
  return "unknown";
}

TextureKind texture_kind_from_string(const std::string& name) {
  if (name == "checkerboard") return TextureKind::kCheckerboard;
  if (name == "noise") return TextureKind::kNoise;
  if (name == "mixed") return TextureKind::kMixed;
  throw std::invalid_argument("unknown texture kind '" + name + "'");
}

int required_margin(const Motion& motion, const RsCamera& cam) {
  // +2 covers the bilinear footprint and the rotation sweep discretization.
  return static_cast<int>(std::ceil(motion.max_displacement(cam))) + 2;
}

SceneTexture make_scene(const SceneSpec& spec) {
  if (spec.height <= 0 || spec.width <= 0) {
    throw std::invalid_argument("scene size must be positive");
  }
  auto rng = index_rng(spec.seed, 0, 0x5CE9E);
  switch (spec.kind) {
    case TextureKind::kCheckerboard:
      return {checkerboard(spec.height, spec.width, rng)};
    case TextureKind::kNoise:
      return {filtered_noise(spec.height, spec.width, rng)};
    case TextureKind::kMixed: {
      Image a = checkerboard(spec.height, spec.width, rng);
      const Image b = filtered_noise(spec.height, spec.width, rng);
      for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = 0.5f * (a.data()[i] + b.data()[i]);
      return {std::move(a)};
    }
  }
  throw std::invalid_argument("bad texture kind");
}

SceneTexture make_scene_for(const SceneSpec& spec, const Motion& motion,
                            const RsCamera& cam) {
  cam.validate();
  const int margin = required_margin(motion, cam);
  const int need_w = cam.width + 2 * margin;
  const int need_h = cam.height + 2 * margin;
  if (spec.width < need_w || spec.height < need_h) {
    std::ostringstream msg;
    msg << "scene " << spec.width << "x" << spec.height << " too small for "
        << to_string(motion.kind) << " motion over a " << cam.width << "x" << cam.height
        << " frame: need at least " << need_w << "x" << need_h << " (margin " << margin
        << " px per side, short by " << std::max(0, need_w - spec.width) << "x"
        << std::max(0, need_h - spec.height) << ")";
    throw ExtentError(msg.str());
  }
  return make_scene(spec);
}

Image render_rs_frame(const SceneTexture& scene, const Motion& motion, const RsCamera& cam,
                      int frame) {
  cam.validate();
  if (frame != 1 && frame != 2) throw std::invalid_argument("frame index must be 1 or 2");
  const FrameOrigin origin = frame_origin(scene, cam);
  Image out(cam.height, cam.width, 3);
  for (int y = 0; y < cam.height; ++y) {
    render_row(scene, motion, cam, origin, y, cam.row_time(frame, y), out);
  }
  return out;
}

RsPair render_rs_pair(const SceneTexture& scene, const Motion& motion, const RsCamera& cam) {
  return {render_rs_frame(scene, motion, cam, 1), render_rs_frame(scene, motion, cam, 2)};
}

Image render_gs(const SceneTexture& scene, const Motion& motion, const RsCamera& cam,
                double t) {
  cam.validate();
  const FrameOrigin origin = frame_origin(scene, cam);
  Image out(cam.height, cam.width, 3);
  for (int y = 0; y < cam.height; ++y) render_row(scene, motion, cam, origin, y, t, out);
  return out;
}

FlowField gt_undistortion_flow(const Motion& motion, const RsCamera& cam, int frame) {
  require_oracle(motion, "undistortion flow");
  cam.validate();
  if (frame != 1 && frame != 2) throw std::invalid_argument("frame index must be 1 or 2");
  FlowField flow = make_flow(cam.height, cam.width);
  const double tau = cam.frame_time;
  for (int y = 0; y < cam.height; ++y) {
    // Time remaining until tau, in frame times: 1 - y/H for frame 1, -y/H for 2.
    const double ratio = static_cast<double>(y) / cam.height;
    const double remaining = frame == 1 ? 1.0 - ratio : -ratio;
    for (int x = 0; x < cam.width; ++x) {
      if (motion.kind == MotionKind::kStatic) continue;
      if (motion.kind == MotionKind::kTranslation) {
        flow.at(y, x, 0) = static_cast<float>(motion.velocity[0] * remaining);
        flow.at(y, x, 1) = static_cast<float>(motion.velocity[1] * remaining);
        continue;
      }
      const Vec2 p{static_cast<double>(x), static_cast<double>(y)};
      const Vec2 s = motion.scene_point(p, cam.row_time(frame, y), tau);
      const Vec2 q = motion.image_point(s, cam.target_time(), tau);
      flow.at(y, x, 0) = static_cast<float>(q[0] - p[0]);
      flow.at(y, x, 1) = static_cast<float>(q[1] - p[1]);
    }
  }
  return flow;
}

Mask gt_visibility_mask(const Motion& motion, const RsCamera& cam) {
  require_oracle(motion, "visibility mask");
  cam.validate();
  Mask mask = make_mask(cam.height, cam.width, 0);
  const double tau = cam.frame_time;
  const double max_x = cam.width - 1.0;
  const double max_y = cam.height - 1.0;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec2 s = motion.scene_point({static_cast<double>(x), static_cast<double>(y)},
                                        cam.target_time(), tau);
      bool visible = false;
      for (int frame = 1; frame <= 2 && !visible; ++frame) {
        // The row that images s satisfies row = image_point(s, row_time(row)).y;
        // the map is a contraction whenever the vertical speed is below H.
        double row = y;
        Vec2 q{};
        for (int it = 0; it < 200; ++it) {
          q = motion.image_point(s, cam.row_time(frame, row), tau);
          const double next = q[1];
          const bool done = std::abs(next - row) < 1e-12;
          row = next;
          if (done) break;
        }
        q = motion.image_point(s, cam.row_time(frame, row), tau);
        visible = q[0] >= 0.0 && q[0] <= max_x && row >= 0.0 && row <= max_y;
      }
      mask.at(y, x) = visible ? 1 : 0;
    }
  }
  return mask;
}

void RsSample::validate() const {
  if (rs1.empty() || rs1.channels() != 3) throw std::invalid_argument("rs1 must be RGB");
  if (!rs1.same_shape(rs2) || !rs1.same_shape(gs)) {
    throw std::invalid_argument("rs1, rs2 and gs must share a shape");
  }
  const auto check_range = [](const Image& img, const char* name) {
    for (float v : img.data()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw std::invalid_argument(std::string(name) + " has value outside [0,1]");
      }
    }
  };
  check_range(rs1, "rs1");
  check_range(rs2, "rs2");
  check_range(gs, "gs");
  for (const FlowField* f : {&flow1, &flow2}) {
    if (f->height() != height() || f->width() != width() || f->channels() != 2) {
      throw std::invalid_argument("flow shape does not match images");
    }
    for (float v : f->data()) {
      if (!std::isfinite(v)) throw std::invalid_argument("flow has non-finite values");
    }
  }
  if (mask.height() != height() || mask.width() != width()) {
    throw std::invalid_argument("mask shape does not match images");
  }
  for (auto v : mask.data()) {
    if (v > 1) throw std::invalid_argument("mask is not binary");
  }
}

std::string to_string(MotionFamily family) {
  switch (family) {
    case MotionFamily::kTranslation: return "translation";
    case MotionFamily::kRotation: return "rotation";
    case MotionFamily::kMixed: return "mixed";
  }
  return "unknown";
}

MotionFamily motion_family_from_string(const std::string& name) {
  if (name == "translation") return MotionFamily::kTranslation;
  if (name == "rotation") return MotionFamily::kRotation;
  if (name == "mixed") return MotionFamily::kMixed;
  throw std::invalid_argument("unknown motion family '" + name +
                              "' (expected translation, rotation or mixed)");
}

GeneratedSample generate_sample(const DatasetConfig& config, int index) {
  if (config.motion.min_speed < 0.0 || config.motion.max_speed < config.motion.min_speed) {
    throw std::invalid_argument("motion speed range must satisfy 0 <= min <= max");
  }
  RsCamera cam{config.height, config.width, 1.0};
  cam.validate();
  auto rng = index_rng(config.seed, index, 0xDA7A);
  std::uniform_real_distribution<double> speed_dist(config.motion.min_speed,
                                                    config.motion.max_speed);
  std::uniform_real_distribution<double> angle_dist(0.0, 2.0 * std::numbers::pi);
  std::bernoulli_distribution coin(0.5);

  bool use_rotation = config.motion.family == MotionFamily::kRotation;
  if (config.motion.family == MotionFamily::kMixed) use_rotation = coin(rng);
  const double speed = speed_dist(rng);
  Motion motion;
  if (use_rotation) {
    const Vec2 pivot{(cam.width - 1) / 2.0, (cam.height - 1) / 2.0};
    const double corner_radius = std::hypot(pivot[0], pivot[1]);
    motion = Motion::rotation((coin(rng) ? 1.0 : -1.0) * speed / corner_radius, pivot);
  } else {
    const double angle = angle_dist(rng);
    motion = Motion::translation(speed * std::cos(angle), speed * std::sin(angle));
  }

  const int margin = required_margin(motion, cam);
  SceneSpec spec{config.texture, cam.height + 2 * margin, cam.width + 2 * margin, rng()};
  const SceneTexture scene = make_scene_for(spec, motion, cam);

  GeneratedSample out;
  out.motion = motion;
  RsPair pair = render_rs_pair(scene, motion, cam);
  out.sample.rs1 = std::move(pair.rs1);
  out.sample.rs2 = std::move(pair.rs2);
  out.sample.gs = render_gs(scene, motion, cam, cam.target_time());
  quantize_8bit(out.sample.rs1);
  quantize_8bit(out.sample.rs2);
  quantize_8bit(out.sample.gs);
  out.sample.flow1 = gt_undistortion_flow(motion, cam, 1);
  out.sample.flow2 = gt_undistortion_flow(motion, cam, 2);
  out.sample.mask = gt_visibility_mask(motion, cam);
  return out;
}

void build_dataset(const DatasetConfig& config) {
  if (config.count <= 0) throw std::invalid_argument("dataset count must be positive");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());

  json manifest{{"schema_version", kDatasetSchemaVersion},
                {"seed", config.seed},
                {"count", config.count},
                {"height", config.height},
                {"width", config.width},
                {"texture", to_string(config.texture)},
                {"motion_family", to_string(config.motion.family)},
                {"min_speed", config.motion.min_speed},
                {"max_speed", config.motion.max_speed},
                {"format",
                 {{"images", "rs1.png rs2.png gs.png (8-bit RGB)"},
                  {"flows", "flow1.rsfl flow2.rsfl (RSFL, u32 H, u32 W, H*W*2 float32 LE)"},
                  {"mask", "mask.png (8-bit, 0/255)"}}}};
  json samples = json::array();
  for (int i = 0; i < config.count; ++i) {
    const GeneratedSample g = generate_sample(config, i);
    const std::string name = sample_dir_name(i);
    const fs::path dir = config.out_dir / name;
    try {
      fs::create_directories(dir);
      write_png(dir / "rs1.png", g.sample.rs1);
      write_png(dir / "rs2.png", g.sample.rs2);
      write_png(dir / "gs.png", g.sample.gs);
      write_flow(dir / "flow1.rsfl", g.sample.flow1);
      write_flow(dir / "flow2.rsfl", g.sample.flow2);
      write_mask_png(dir / "mask.png", g.sample.mask);
    } catch (const std::exception& e) {
      throw IoError("sample " + std::to_string(i) + ": " + e.what());
    }
    samples.push_back({{"index", i}, {"dir", name}, {"motion", motion_to_json(g.motion)}});
  }
  manifest["samples"] = std::move(samples);
  const fs::path manifest_path = config.out_dir / "manifest.json";
  std::ofstream out(manifest_path);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + manifest_path.string());
}

Dataset Dataset::open(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("missing dataset manifest " + path.string());
  Dataset ds;
  ds.root_ = dir;
  try {
    const json j = json::parse(in);
    const int version = j.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion) {
      throw IoError("unsupported dataset schema version " + std::to_string(version));
    }
    ds.height_ = j.at("height").get<int>();
    ds.width_ = j.at("width").get<int>();
    ds.seed_ = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("samples")) {
      ds.entries_.push_back({s.at("index").get<int>(), s.at("dir").get<std::string>(),
                             motion_from_json(s.at("motion"))});
    }
    if (static_cast<int>(ds.entries_.size()) != j.at("count").get<int>()) {
      throw IoError("manifest count does not match its sample list");
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return ds;
}

const ManifestEntry& Dataset::entry(int index) const {
  if (index < 0 || index >= size()) {
    throw std::out_of_range("sample index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(size()) + ")");
  }
  return entries_[static_cast<std::size_t>(index)];
}

RsSample Dataset::load(int index) const {
  const auto dir = root_ / entry(index).dir;
  RsSample s;
  s.rs1 = read_png(dir / "rs1.png");
  s.rs2 = read_png(dir / "rs2.png");
  s.gs = read_png(dir / "gs.png");
  s.flow1 = read_flow(dir / "flow1.rsfl");
  s.flow2 = read_flow(dir / "flow2.rsfl");
  s.mask = read_mask_png(dir / "mask.png");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError("corrupt sample " + dir.string() + ": " + e.what());
  }
  if (s.height() != height_ || s.width() != width_) {
    throw IoError("sample " + dir.string() + " does not match manifest resolution");
  }
  return s;
}

RsSample load_sample(const std::filesystem::path& dir, int index) {
  return Dataset::open(dir).load(index);
}

}  // namespace sunet::imaging
