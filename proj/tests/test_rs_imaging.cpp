#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "sunet/image_io.hpp"
#include "sunet/rs_imaging.hpp"
#include "test_support.hpp"

namespace sunet::imaging {
namespace {

RsCamera camera(int h = 64, int w = 64) { return RsCamera{h, w, 1.0}; }

SceneTexture scene_for(const Motion& m, const RsCamera& cam, TextureKind kind = TextureKind::kMixed) {
  const int margin = required_margin(m, cam);
  return make_scene(SceneSpec{kind, cam.height + 2 * margin, cam.width + 2 * margin, 3});
}

double max_abs(const Image& a, const Image& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a.data()[i] - b.data()[i])));
  return worst;
}

TEST(Scene, CheckerboardRangeAndShape) {
  const SceneTexture s = make_scene({TextureKind::kCheckerboard, 96, 96, 7});
  EXPECT_EQ(s.height(), 96);
  EXPECT_EQ(s.width(), 96);
  EXPECT_EQ(s.pixels.channels(), 3);
  for (float v : s.pixels.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Scene, Deterministic) {
  for (auto kind : {TextureKind::kCheckerboard, TextureKind::kNoise, TextureKind::kMixed}) {
    EXPECT_EQ(make_scene({kind, 80, 70, 11}).pixels, make_scene({kind, 80, 70, 11}).pixels);
  }
}

TEST(Scene, NoiseSeedsDiffer) {
  const Image a = make_scene({TextureKind::kNoise, 96, 96, 7}).pixels;
  const Image b = make_scene({TextureKind::kNoise, 96, 96, 8}).pixels;
  int differing = 0;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      bool diff = false;
      for (int c = 0; c < 3; ++c) diff = diff || a.at(y, x, c) != b.at(y, x, c);
      differing += diff;
    }
  EXPECT_GT(differing, 96 * 96 / 10);
}

TEST(Scene, TooSmallForMotionReportsMargin) {
  const RsCamera cam = camera();
  const Motion m = Motion::translation(10, 0);
  try {
    make_scene_for({TextureKind::kMixed, 66, 66, 1}, m, cam);
    FAIL() << "expected ExtentError";
  } catch (const ExtentError& e) {
    EXPECT_NE(std::string(e.what()).find("margin"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(make_scene_for(
      {TextureKind::kMixed, 64 + 2 * required_margin(m, cam), 64 + 2 * required_margin(m, cam), 1}, m, cam));
}

TEST(Render, StaticFramesAreTheCentralCrop) {
  const RsCamera cam = camera(32, 40);
  const Motion m = Motion::stationary();
  const SceneTexture s = make_scene({TextureKind::kMixed, 48, 60, 2});
  const RsPair p = render_rs_pair(s, m, cam);
  EXPECT_EQ(p.rs1, p.rs2);
  const int oy = (48 - 32) / 2, ox = (60 - 40) / 2;
  double worst = 0.0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 40; ++x)
      for (int c = 0; c < 3; ++c) worst = std::max(worst, double(std::abs(p.rs1.at(y, x, c) - s.pixels.at(y + oy, x + ox, c))));
  EXPECT_LT(worst, 1e-6);
  EXPECT_EQ(render_gs(s, m, cam, 0.0), p.rs1);
}

TEST(Render, TranslationRowTimeShift) {
  const RsCamera cam = camera();
  const Motion m = Motion::translation(8, 0);
  const SceneTexture s = scene_for(m, cam);
  const Image rs1 = render_rs_frame(s, m, cam, 1);
  const Image gs0 = render_gs(s, m, cam, 0.0);
  // Row 32 is exposed at t = 0.5, so content has moved 4 px right.
  double worst = 0.0;
  for (int x = 4; x < 64; ++x)
    for (int c = 0; c < 3; ++c) worst = std::max(worst, double(std::abs(rs1.at(32, x, c) - gs0.at(32, x - 4, c))));
  EXPECT_LT(worst, 1e-5);
}

TEST(Render, FrameBoundaryRowsNearlyAgree) {
  const RsCamera cam = camera();
  const Motion m = Motion::translation(8, 0);
  const SceneTexture s = scene_for(m, cam);
  const RsPair p = render_rs_pair(s, m, cam);
  // Bottom row of frame 1 at t = 63/64, top row of frame 2 at t = 1: both are
  // the GS image at those instants, one row-time quantum apart.
  const Image g_a = render_gs(s, m, cam, cam.row_time(1, 63));
  const Image g_b = render_gs(s, m, cam, cam.row_time(2, 0));
  double d63 = 0.0, d0 = 0.0;
  for (int x = 0; x < 64; ++x)
    for (int c = 0; c < 3; ++c) {
      d63 = std::max(d63, double(std::abs(p.rs1.at(63, x, c) - g_a.at(63, x, c))));
      d0 = std::max(d0, double(std::abs(p.rs2.at(0, x, c) - g_b.at(0, x, c))));
    }
  EXPECT_LT(d63, 1e-6);
  EXPECT_LT(d0, 1e-6);
  EXPECT_DOUBLE_EQ(cam.row_time(2, 0) - cam.row_time(1, 63), 1.0 / 64);
}

TEST(Render, GsTranslationShift) {
  const RsCamera cam = camera();
  const Motion m = Motion::translation(8, 0);
  const SceneTexture s = scene_for(m, cam);
  const Image g0 = render_gs(s, m, cam, 0.0);
  const Image g_half = render_gs(s, m, cam, 0.5);
  const Image g1 = render_gs(s, m, cam, 1.0);
  double full = 0.0, half = 0.0;
  for (int y = 0; y < 64; ++y)
    for (int x = 8; x < 64; ++x)
      for (int c = 0; c < 3; ++c) {
        full = std::max(full, double(std::abs(g1.at(y, x, c) - g0.at(y, x - 8, c))));
        half = std::max(half, double(std::abs(g1.at(y, x, c) - g_half.at(y, x - 4, c))));
      }
  EXPECT_LT(full, 1e-5);
  EXPECT_LT(half, 1e-5);
}

TEST(Render, RowTimeLaw) {
  const RsCamera cam = camera(24, 32);
  const Motion m = Motion::rotation(0.05, {16, 12});
  const SceneTexture s = scene_for(m, cam);
  for (int k = 1; k <= 2; ++k) {
    const Image rs = render_rs_frame(s, m, cam, k);
    for (int y : {0, 7, 23}) {
      const Image g = render_gs(s, m, cam, cam.row_time(k, y));
      for (int x = 0; x < 32; ++x)
        for (int c = 0; c < 3; ++c) ASSERT_EQ(rs.at(y, x, c), g.at(y, x, c));
    }
  }
}

TEST(Render, OutsideExtentThrows) {
  const RsCamera cam = camera();
  const SceneTexture s = make_scene({TextureKind::kMixed, 66, 66, 1});
  EXPECT_THROW(render_rs_pair(s, Motion::translation(10, 0), cam), ExtentError);
}

TEST(Flow, TranslationClosedForm) {
  const RsCamera cam = camera();
  const FlowField f1 = gt_undistortion_flow(Motion::translation(8, 0), cam, 1);
  const FlowField f2 = gt_undistortion_flow(Motion::translation(8, 0), cam, 2);
  EXPECT_FLOAT_EQ(f1.at(0, 5, 0), 8.0f);
  EXPECT_FLOAT_EQ(f1.at(0, 5, 1), 0.0f);
  EXPECT_FLOAT_EQ(f2.at(0, 5, 0), 0.0f);
  for (int y = 0; y < 64; ++y) {
    EXPECT_FLOAT_EQ(f1.at(y, 9, 0), static_cast<float>(8.0 * (1.0 - y / 64.0)));
    EXPECT_FLOAT_EQ(f2.at(y, 9, 0), static_cast<float>(-8.0 * (y / 64.0)));
  }
}

TEST(Flow, StaticIsZero) {
  for (int k = 1; k <= 2; ++k) {
    const FlowField f = gt_undistortion_flow(Motion::stationary(), camera(), k);
    for (float v : f.data()) ASSERT_EQ(v, 0.0f);
  }
}

TEST(Flow, AffineHasNoOracle) {
  Motion m;
  m.kind = MotionKind::kAffine;
  m.affine_rate = {0.01, 0.0, 0.0, 0.01};
  EXPECT_THROW(gt_undistortion_flow(m, camera(), 1), UnsupportedOracle);
  EXPECT_THROW(gt_visibility_mask(m, camera()), UnsupportedOracle);
}

TEST(Flow, MatchesRowTimeCorrespondence) {
  // Each RS pixel, moved by its flow, lands where the GS image holds the same
  // scene point: checked by tracing the scene point explicitly.
  const RsCamera cam = camera(32, 32);
  const Motion m = Motion::rotation(0.04, {13, 17});
  for (int k = 1; k <= 2; ++k) {
    const FlowField f = gt_undistortion_flow(m, cam, k);
    for (int y = 0; y < 32; y += 3)
      for (int x = 0; x < 32; x += 5) {
        const Vec2 s = m.scene_point({double(x), double(y)}, cam.row_time(k, y));
        const Vec2 g = m.image_point(s, cam.target_time());
        ASSERT_NEAR(x + f.at(y, x, 0), g[0], 1e-4);
        ASSERT_NEAR(y + f.at(y, x, 1), g[1], 1e-4);
      }
  }
}

TEST(Mask, StaticAllVisible) {
  const Mask mask = gt_visibility_mask(Motion::stationary(), camera());
  for (auto v : mask.data()) ASSERT_EQ(v, 1);
}

TEST(Mask, HorizontalTranslationBorderBand) {
  const Mask mask = gt_visibility_mask(Motion::translation(8, 0), camera());
  // Invisible pixels, if any, form a band of at most 8 columns on one side.
  int min_col = 64, max_col = -1;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      ASSERT_LE(mask.at(y, x), 1);
      if (!mask.at(y, x)) {
        min_col = std::min(min_col, x);
        max_col = std::max(max_col, x);
      }
    }
  if (max_col >= 0) {
    EXPECT_TRUE(max_col < 8 || min_col >= 56) << min_col << ".." << max_col;
  }
  for (int y = 0; y < 64; ++y)
    for (int x = 8; x < 56; ++x) ASSERT_EQ(mask.at(y, x), 1);
}

TEST(Mask, MatchesPointTracing) {
  const RsCamera cam = camera(40, 48);
  const Motion m = Motion::translation(9.0, -6.0);
  const Mask mask = gt_visibility_mask(m, cam);
  // A GS pixel is visible when at least one RS frame has a row whose exposure
  // instant images its scene point on that very row, inside the frame. Scan
  // rows finely instead of solving for them.
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec2 s = m.scene_point({double(x), double(y)}, cam.target_time());
      bool visible = false;
      for (int k = 1; k <= 2 && !visible; ++k) {
        double prev = 0.0;
        for (int i = 0; i <= 4000 && !visible; ++i) {
          const double r = (cam.height - 1) * i / 4000.0;
          const Vec2 p = m.image_point(s, cam.row_time(k, r));
          const double gap = p[1] - r;
          if (gap == 0.0 || (i > 0 && (gap > 0) != (prev > 0))) {
            visible = p[0] >= 0 && p[0] <= cam.width - 1;
          }
          prev = gap;
        }
      }
      ASSERT_EQ(mask.at(y, x) == 1, visible) << "(" << x << ", " << y << ")";
    }
}

TEST(Dataset, GenerateIsPureFunctionOfIndex) {
  DatasetConfig dc;
  dc.count = 5;
  dc.height = dc.width = 32;
  const GeneratedSample a = generate_sample(dc, 3);
  const GeneratedSample b = generate_sample(dc, 3);
  EXPECT_EQ(a.sample.rs1, b.sample.rs1);
  EXPECT_EQ(a.sample.gs, b.sample.gs);
  EXPECT_EQ(a.sample.flow1, b.sample.flow1);
  EXPECT_NO_THROW(a.sample.validate());
  const double speed = std::hypot(a.motion.velocity[0], a.motion.velocity[1]);
  EXPECT_GE(speed, dc.motion.min_speed - 1e-9);
  EXPECT_LE(speed, dc.motion.max_speed + 1e-9);
}

TEST(Dataset, SampleStructure) {
  DatasetConfig dc;
  dc.count = 4;
  const RsSample s = generate_sample(dc, 1).sample;
  // Frame 1 near the bottom and frame 2 near the top are close to the target time.
  for (int x = 0; x < 64; ++x) {
    EXPECT_LT(std::hypot(s.flow1.at(63, x, 0), s.flow1.at(63, x, 1)), 0.2);
    EXPECT_LT(std::hypot(s.flow2.at(0, x, 0), s.flow2.at(0, x, 1)), 1e-6);
  }
}

TEST(Dataset, BuildAndReload) {
  test::TempDir tmp;
  DatasetConfig dc;
  dc.count = 6;
  dc.height = 32;
  dc.width = 48;
  dc.seed = 1;
  dc.out_dir = tmp / "a";
  build_dataset(dc);
  const Dataset ds = Dataset::open(dc.out_dir);
  EXPECT_EQ(ds.size(), 6);
  EXPECT_EQ(ds.height(), 32);
  EXPECT_EQ(ds.width(), 48);
  const RsSample mem = generate_sample(dc, 0).sample;
  const RsSample disk = ds.load(0);
  EXPECT_EQ(mem.rs1, disk.rs1);
  EXPECT_EQ(mem.rs2, disk.rs2);
  EXPECT_EQ(mem.gs, disk.gs);
  EXPECT_EQ(mem.flow1, disk.flow1);
  EXPECT_EQ(mem.flow2, disk.flow2);
  EXPECT_EQ(mem.mask, disk.mask);
  EXPECT_EQ(load_sample(dc.out_dir, 5).rs1, generate_sample(dc, 5).sample.rs1);
  EXPECT_THROW(ds.load(6), std::out_of_range);

  dc.out_dir = tmp / "b";
  build_dataset(dc);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(tmp / "a" / "manifest.json"), slurp(tmp / "b" / "manifest.json"));
  EXPECT_EQ(read_png(tmp / "a" / ds.entry(2).dir / "rs2.png"), read_png(tmp / "b" / ds.entry(2).dir / "rs2.png"));
}

TEST(Dataset, MissingAndCorruptFiles) {
  test::TempDir tmp;
  EXPECT_THROW(Dataset::open(tmp / "nope"), IoError);
  DatasetConfig dc;
  dc.count = 2;
  dc.height = dc.width = 16;
  dc.motion.min_speed = 1;
  dc.motion.max_speed = 2;
  dc.out_dir = tmp.path();
  build_dataset(dc);
  const Dataset ds = Dataset::open(tmp.path());
  std::filesystem::remove(tmp / ds.entry(1).dir / "flow2.rsfl");
  try {
    ds.load(1);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("flow2.rsfl"), std::string::npos) << e.what();
  }
  std::ofstream(tmp / ds.entry(0).dir / "rs1.png") << "not a png";
  EXPECT_THROW(ds.load(0), IoError);
}

TEST(ImageIo, PngAndFlowRoundTrip) {
  test::TempDir tmp;
  Image img = test::random_image(7, 9, 4);
  quantize_8bit(img);
  write_png(tmp / "a.png", img);
  EXPECT_EQ(read_png(tmp / "a.png"), img);
  FlowField f = make_flow(5, 3);
  for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = 0.25f * i - 1.0f;
  write_flow(tmp / "f.rsfl", f);
  EXPECT_EQ(read_flow(tmp / "f.rsfl"), f);
  Mask m = make_mask(4, 4, 0);
  m.at(1, 2) = 1;
  write_mask_png(tmp / "m.png", m);
  EXPECT_EQ(read_mask_png(tmp / "m.png"), m);
  std::ofstream(tmp / "t.rsfl", std::ios::binary) << "RSFL";
  EXPECT_THROW(read_flow(tmp / "t.rsfl"), IoError);
}

}  // namespace
}  // namespace sunet::imaging
