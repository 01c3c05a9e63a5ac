#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "nvv/scene_oracle.hpp"

namespace nvv {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("nvv_oracle_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

BlobScene one_blob(Vec3<double> c, double peak = 20, double radius = 0.1) {
  BlobScene s;
  Blob b;
  b.center = c;
  b.peak = peak;
  b.radius = radius;
  b.color = {0.2, 0.6, 0.9};
  s.blobs = {b};
  return s;
}

TEST(OracleField, FarFromBlobsIsEmptyAndBackgroundColored) {
  auto s = one_blob({0.2, 0.2, 0.2});
  s.background = {0.3, 0.4, 0.5};
  const auto o = oracle_field(s, {0.95, 0.95, 0.95}, 0);
  EXPECT_LT(o.sigma, 1e-9);
  EXPECT_EQ(o.rgb, s.background);
}

TEST(OracleField, PeakAtCenter) {
  const auto s = one_blob({0.4, 0.5, 0.6}, 17);
  const auto o = oracle_field(s, {0.4, 0.5, 0.6}, 0);
  EXPECT_DOUBLE_EQ(o.sigma, 17);
  EXPECT_NEAR(o.rgb.y, 0.6, 1e-15);
}

TEST(OracleField, OverlappingBlobsAdd) {
  BlobScene s = one_blob({0.4, 0.5, 0.5}, 10, 0.1);
  s.blobs.push_back(s.blobs[0]);
  s.blobs[1].center = {0.6, 0.5, 0.5};
  const auto o = oracle_field(s, {0.5, 0.5, 0.5}, 0);
  EXPECT_NEAR(o.sigma, 2 * 10 * std::exp(-0.01 / (2 * 0.01)), 1e-12);
}

TEST(BlobScene, ValidateRejectsBadBlobs) {
  auto s = one_blob({0.5, 0.5, 0.5});
  s.blobs[0].radius = 0;
  EXPECT_THROW(s.validate(), config_error);
  s = one_blob({0.5, 0.5, 0.5});
  s.blobs[0].peak = -1;
  EXPECT_THROW(s.validate(), config_error);
  s = one_blob({0.9, 0.5, 0.5});
  s.blobs[0].amplitude = {0.2, 0, 0};
  EXPECT_THROW(s.validate(), config_error);
  EXPECT_NO_THROW(acceptance_scene().validate());
}

TEST(BlobScene, AcceptanceSceneMovesAtMostTwoHundredthsPerFrame) {
  const auto s = acceptance_scene(40);
  EXPECT_EQ(s.blobs.size(), 3u);
  for (const auto& b : s.blobs)
    for (int t = 0; t + 1 < s.frames; ++t) {
      const auto d = b.center_at(t + 1) - b.center_at(t);
      EXPECT_LE(std::sqrt(dot(d, d)), 0.02);
    }
}

TEST(OracleRender, EmptySceneIsUniformBackground) {
  BlobScene s;
  s.background = {0.1, 0.7, 0.3};
  const auto cam = camera_rig(1, 9, 7)[0];
  EXPECT_EQ(oracle_render(s, cam, 0, 64), Image(9, 7, s.background.cast<float>()));
}

TEST(OracleRender, QuadratureConverges) {
  const auto s = acceptance_scene(1);
  const auto cam = camera_rig(3, 16, 16)[1];
  const auto a = oracle_render(s, cam, 0, 256), b = oracle_render(s, cam, 0, 512);
  for (std::size_t i = 0; i < a.rgb.size(); ++i) EXPECT_LT(std::abs(a.rgb[i] - b.rgb[i]), 1e-3) << i;
}

TEST(OracleRender, CenteredBlobIsMirrorSymmetric) {
  const auto s = one_blob({0.5, 0.5, 0.5}, 30, 0.15);
  const int n = 15;
  const auto cam = look_at({0.5, 0.5, 3.0}, {0.5, 0.5, 0.5}, {0, 1, 0}, n, n, 30);
  const auto img = oracle_render(s, cam, 0, 128);
  auto px = [&](int x, int y) { return img.pixel(static_cast<std::size_t>(y) * n + x); };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto p = px(x, y), h = px(n - 1 - x, y), v = px(x, n - 1 - y), t = px(y, x);
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(p[c], h[c], 1e-5);
        EXPECT_NEAR(p[c], v[c], 1e-5);
        EXPECT_NEAR(p[c], t[c], 1e-5);
      }
    }
  // The blob is actually visible.
  EXPECT_LT(px(n / 2, n / 2).x, 0.5f);
}

TEST(CameraRig, ViewsLookAtTheCubeFromFixedRadius) {
  const auto cams = camera_rig(20, 8, 8);
  ASSERT_EQ(cams.size(), 20u);
  for (const auto& c : cams) {
    const Vec3<double> d = c.position - Vec3<double>{0.5, 0.5, 0.5};
    EXPECT_NEAR(std::sqrt(dot(d, d)), 2.5, 1e-12);
    EXPECT_GT(d.y, 0);  // upper hemisphere
  }
  for (std::size_t i = 0; i < cams.size(); ++i)
    for (std::size_t j = i + 1; j < cams.size(); ++j) EXPECT_NE(cams[i].position, cams[j].position);
  EXPECT_THROW(camera_rig(0, 8, 8), config_error);
}

TEST(Dataset, SplitHoldsOutLastViews) {
  const auto m = default_split(40, 20, 128, 128);
  EXPECT_EQ(m.train_views.size(), 16u);
  EXPECT_EQ(m.test_views, (std::vector<int>{16, 17, 18, 19}));
}

TEST(Dataset, TwoFramesThreeViewsWriteSixImagesAndAManifest) {
  const auto ds = synthesize(acceptance_scene(2), camera_rig(3, 8, 6), 32, 1);
  const auto dir = scratch_dir("count");
  write_dataset(ds, dir);
  int ppm = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) ppm += e.path().extension() == ".ppm";
  EXPECT_EQ(ppm, 6);
  EXPECT_TRUE(fs::exists(dir / "manifest.txt"));
  EXPECT_TRUE(fs::exists(dir / "poses.txt"));
  fs::remove_all(dir);
}

TEST(Dataset, RegenerationIsByteIdentical) {
  const auto a = scratch_dir("regen_a"), b = scratch_dir("regen_b");
  write_dataset(synthesize(acceptance_scene(2), camera_rig(3, 8, 6), 32, 1), a);
  write_dataset(synthesize(acceptance_scene(2), camera_rig(3, 8, 6), 32, 1), b);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
  }
  EXPECT_EQ(files, 8);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, LoaderRoundTrip) {
  const auto ds = synthesize(acceptance_scene(2), camera_rig(4, 10, 8), 32, 1);
  const auto dir = scratch_dir("roundtrip");
  write_dataset(ds, dir);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.manifest.train_views, ds.manifest.train_views);
  EXPECT_EQ(back.manifest.test_views, ds.manifest.test_views);
  EXPECT_EQ(back.manifest.background, ds.manifest.background);
  EXPECT_EQ(back.cameras, ds.cameras);
  fs::remove_all(dir);
}

TEST(Dataset, LoaderReportsMissingAndMalformedFiles) {
  const auto dir = scratch_dir("broken");
  EXPECT_THROW(load_dataset(dir), io_error);
  write_dataset(synthesize(acceptance_scene(1), camera_rig(2, 4, 4), 16, 1), dir);
  fs::remove(dir / "frame_0000" / "view_01.ppm");
  EXPECT_ANY_THROW(load_dataset(dir));
  EXPECT_NO_THROW(load_dataset(dir, false));
  std::ofstream(dir / "manifest.txt") << "frames=1\nviews=2\nwidth=4\nheight=4\ntrain_views=0,1\ntest_views=1\n";
  EXPECT_THROW(load_dataset(dir, false), format_error);
  fs::remove_all(dir);
}

TEST(Dataset, StaticSceneFramesAreIdentical) {
  auto s = acceptance_scene(3);
  for (auto& b : s.blobs) b.amplitude = {};
  const auto ds = synthesize(s, camera_rig(3, 8, 8), 32, 1);
  EXPECT_EQ(ds.images[0], ds.images[1]);
  EXPECT_EQ(ds.images[0], ds.images[2]);
}

}  // namespace
}  // namespace nvv
