#pragma once

// Rolling-shutter camera simulator over a textured plane undergoing
// image-space motion. Provides rendering of RS frame pairs and global-shutter
// references plus the closed-form undistortion flows and visibility masks
// that serve as geometric ground truth.
//
// Time convention: tau (frame time) = 1 by default. Row y of frame k in {1,2}
// is exposed instantaneously at t = ((k - 1) + y / H) * tau, with no gap
// between frames. The correction target is the global-shutter image at t = tau.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/image.hpp"

namespace sunet::imaging {

using Vec2 = std::array<double, 2>;

/// Sampling outside the scene texture, or a texture too small for the motion.
class ExtentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested an analytic quantity for a motion kind that has no closed form.
class UnsupportedOracle : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RsCamera {
  int height = 64;
  int width = 64;
  double frame_time = 1.0;

  /// Exposure instant of row y in frame k (1-based).
  double row_time(int frame, double y) const {
    return (static_cast<double>(frame - 1) + y / height) * frame_time;
  }
  /// The time-centered GS instant between the two frames.
  double target_time() const { return frame_time; }
  void validate() const;
};

enum class MotionKind { kStatic, kTranslation, kRotation, kAffine };

std::string to_string(MotionKind kind);
MotionKind motion_kind_from_string(const std::string& name);

/// Image-space motion of the scene plane relative to the camera. A scene point
/// s (scene coordinates, origin at the camera frame's top-left) appears at
/// image_point(s, t) at time t. Velocities are per frame time.
///
///  - translation: content moves by velocity * t / tau.
///  - rotation: content rotates about `center` by angular_rate * t / tau.
///  - affine: content follows (I + (t/tau) A)(s - c) + c + velocity * t / tau,
///    with A = affine_rate (row-major 2x2). Renders fine, but has no oracle.
struct Motion {
  MotionKind kind = MotionKind::kStatic;
  Vec2 velocity{0.0, 0.0};
  double angular_rate = 0.0;
  Vec2 center{0.0, 0.0};
  std::array<double, 4> affine_rate{0.0, 0.0, 0.0, 0.0};

  static Motion stationary() { return {}; }
  static Motion translation(double vx, double vy);
  static Motion rotation(double rate, Vec2 pivot);

  bool has_closed_form() const {
    return kind == MotionKind::kStatic || kind == MotionKind::kTranslation ||
           kind == MotionKind::kRotation;
  }

  Vec2 image_point(Vec2 scene, double t, double tau = 1.0) const;
  Vec2 scene_point(Vec2 image, double t, double tau = 1.0) const;

  /// Largest |scene_point(p, t) - p| over the camera frame and t in [0, 2 tau].
  double max_displacement(const RsCamera& cam) const;
};

enum class TextureKind { kCheckerboard, kNoise, kMixed };

std::string to_string(TextureKind kind);
TextureKind texture_kind_from_string(const std::string& name);

struct SceneSpec {
  TextureKind kind = TextureKind::kMixed;
  int height = 96;
  int width = 96;
  std::uint64_t seed = 0;
};

struct SceneTexture {
  Image pixels;

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }
};

/// Integer margin (per side) a texture needs around the camera frame so that
/// the given motion never samples outside it over two frame times.
int required_margin(const Motion& motion, const RsCamera& cam);

/// Deterministic texture in [0,1]: a colored checkerboard, band-limited noise at
/// two scales, or their blend.
SceneTexture make_scene(const SceneSpec& spec);

/// As make_scene, but first verifies the extent invariant for the intended
/// motion and throws ExtentError with the margin shortfall otherwise.
SceneTexture make_scene_for(const SceneSpec& spec, const Motion& motion,
                            const RsCamera& cam);

struct RsPair {
  Image rs1;
  Image rs2;
};

/// Row y of frame k samples the scene at row_time(k, y).
RsPair render_rs_pair(const SceneTexture& scene, const Motion& motion, const RsCamera& cam);
Image render_rs_frame(const SceneTexture& scene, const Motion& motion, const RsCamera& cam,
                      int frame);
/// All rows sampled at the single time t.
Image render_gs(const SceneTexture& scene, const Motion& motion, const RsCamera& cam,
                double t);

/// Displacement taking RS pixel (x, y) of frame k to its position in the GS
/// image at tau. For translation v: frame 1 gives v (1 - y/H), frame 2 gives
/// -v (y/H).
FlowField gt_undistortion_flow(const Motion& motion, const RsCamera& cam, int frame);

/// 1 where the GS-at-tau scene point is inside the sampled region of at least
/// one RS frame.
Mask gt_visibility_mask(const Motion& motion, const RsCamera& cam);

struct RsSample {
  Image rs1;
  Image rs2;
  Image gs;
  FlowField flow1;
  FlowField flow2;
  Mask mask;

  int height() const { return rs1.height(); }
  int width() const { return rs1.width(); }
  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

// Dataset generation ------------------------------------------------------

enum class MotionFamily { kTranslation, kRotation, kMixed };

std::string to_string(MotionFamily family);
MotionFamily motion_family_from_string(const std::string& name);

struct MotionDistribution {
  MotionFamily family = MotionFamily::kTranslation;
  /// Speed range in px per frame time. For rotations it bounds the speed at
  /// the frame corners.
  double min_speed = 4.0;
  double max_speed = 10.0;
};

struct DatasetConfig {
  int count = 200;
  int height = 64;
  int width = 64;
  MotionDistribution motion;
  TextureKind texture = TextureKind::kMixed;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;
};

struct GeneratedSample {
  RsSample sample;
  Motion motion;
};

/// Pure function of (config, index). Images are quantized to 8 bits so they
/// survive the PNG round trip bit-exactly.
GeneratedSample generate_sample(const DatasetConfig& config, int index);

inline constexpr int kDatasetSchemaVersion = 1;

/// Writes config.count samples plus manifest.json under config.out_dir.
void build_dataset(const DatasetConfig& config);

struct ManifestEntry {
  int index = 0;
  std::string dir;
  Motion motion;
};

class Dataset {
 public:
  /// Parses <dir>/manifest.json. Throws IoError on missing or malformed files.
  static Dataset open(const std::filesystem::path& dir);

  int size() const { return static_cast<int>(entries_.size()); }
  int height() const { return height_; }
  int width() const { return width_; }
  std::uint64_t seed() const { return seed_; }
  const std::filesystem::path& root() const { return root_; }
  const ManifestEntry& entry(int index) const;
  RsSample load(int index) const;

 private:
  std::filesystem::path root_;
  int height_ = 0;
  int width_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<ManifestEntry> entries_;
};

RsSample load_sample(const std::filesystem::path& dir, int index);

}  // namespace sunet::imaging
