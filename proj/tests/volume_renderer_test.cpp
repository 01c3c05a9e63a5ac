#include "nvv/volume_renderer.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "nvv/field_set.hpp"
#include "test_util.hpp"

namespace nvv {
namespace {

using test::uniform;

Vec3<double> random_unit(Rng& rng) {
  return normalized(Vec3<double>{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
}

TEST(Camera, LookAtIsOrthonormalAndValid) {
  auto cam = look_at({0.5, 0.5, 3.0}, {0.5, 0.5, 0.5}, {0, 1, 0}, 33, 33, 40);
  EXPECT_NO_THROW(cam.validate());
  Camera bad = cam;
  bad.rotation[0] = 2;
  EXPECT_THROW(bad.validate(), config_error);
  bad = cam;
  bad.fx = 0;
  EXPECT_THROW(bad.validate(), config_error);
}

TEST(GenerateRays, CenterPixelLooksDownMinusZ) {
  auto cam = look_at({0.5, 0.5, 3.0}, {0.5, 0.5, 0.5}, {0, 1, 0}, 33, 33, 40);
  const std::uint32_t center = 16 * 33 + 16;
  auto rays = generate_rays(cam, std::span(&center, 1));
  ASSERT_EQ(rays.size(), 1u);
  EXPECT_NEAR(rays.directions[0].x, 0, 1e-12);
  EXPECT_NEAR(rays.directions[0].y, 0, 1e-12);
  EXPECT_NEAR(rays.directions[0].z, -1, 1e-12);
  EXPECT_NEAR(rays.near[0], 2.0, 1e-12);
  EXPECT_NEAR(rays.far[0], 3.0, 1e-12);
}

TEST(GenerateRays, UpIsUpInTheImage) {
  // A world point above the cube center must land in the upper image half.
  auto cam = look_at({0.5, 0.5, 3.0}, {0.5, 0.5, 0.5}, {0, 1, 0}, 32, 32, 40);
  const std::uint32_t top = 10 * 32 + 16;
  auto rays = generate_rays(cam, std::span(&top, 1));
  ASSERT_EQ(rays.size(), 1u);
  EXPECT_GT(rays.directions[0].y, 0);
}

TEST(GenerateRays, MissesAreDroppedAndBoundsChecked) {
  auto cam = look_at({0.5, 0.5, 3.0}, {0.5, 0.5, 10.0}, {0, 1, 0}, 8, 8, 40);  // facing away
  EXPECT_EQ(generate_rays(cam).size(), 0u);
  const std::uint32_t oob = 64;
  EXPECT_THROW(generate_rays(cam, std::span(&oob, 1)), contract_error);
}

TEST(GenerateRays, EntryAndExitLieOnCubeBoundary) {
  Rng rng(1);
  int checked = 0;
  while (checked < 100) {
    const Vec3<double> o = Vec3<double>{0.5, 0.5, 0.5} + random_unit(rng) * uniform(rng, 1.0, 3.0);
    const Vec3<double> d = random_unit(rng);
    double t0, t1;
    if (!intersect_unit_cube(o, d, t0, t1)) continue;
    ++checked;
    for (double t : {t0, t1}) {
      const auto p = o + d * t;
      double inside = 0, on_face = 1e9;
      for (int a = 0; a < 3; ++a) {
        inside = std::max({inside, -p[a], p[a] - 1});
        on_face = std::min({on_face, std::abs(p[a]), std::abs(p[a] - 1)});
      }
      EXPECT_LE(inside, 1e-9);
      EXPECT_LE(on_face, 1e-9);
    }
  }
}

RayBatch one_ray(double near, double far) {
  RayBatch r;
  r.origins = {{0, 0, 0}};
  r.directions = {{1, 0, 0}};
  r.pixels = {0};
  r.near = {near};
  r.far = {far};
  return r;
}

TEST(SamplePoints, Midpoints) {
  auto s = sample_points<double>(one_ray(0.2, 0.8), 1, false);
  EXPECT_DOUBLE_EQ(s.t[0], 0.5);
  auto s4 = sample_points<double>(one_ray(0.0, 1.0), 4, false);
  const double want[4] = {0.125, 0.375, 0.625, 0.875};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s4.t[i], want[i]);
  EXPECT_DOUBLE_EQ(s4.delta[0], 0.25);
  EXPECT_DOUBLE_EQ(s4.delta[3], 0.125);  // far - t_N
  EXPECT_THROW(sample_points<double>(one_ray(0, 1), 0, false), config_error);
}

TEST(SamplePoints, StratifiedStayInBins) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto s = sample_points<double>(one_ray(1.0, 3.0), 8, true, &rng);
    for (int i = 0; i < 8; ++i) {
      EXPECT_GE(s.t[i], 1.0 + i * 0.25);
      EXPECT_LT(s.t[i], 1.0 + (i + 1) * 0.25);
      EXPECT_GT(s.delta[i], 0.0);
    }
  }
}

TEST(Composite, Examples) {
  std::vector<Vec3<double>> c{{1, 0, 0}, {0, 1, 0}};
  std::vector<double> zero{0, 0}, d{0.5, 0.5};
  auto r = composite<double>(c, zero, d, {0.2, 0.3, 0.4});
  EXPECT_EQ(r.rgb, (Vec3<double>{0.2, 0.3, 0.4}));
  EXPECT_EQ(r.weights[0], 0.0);

  std::vector<double> opaque{60, 0};
  r = composite<double>(c, opaque, d, {1, 1, 1});
  EXPECT_NEAR(r.rgb.x, 1.0, 1e-12);
  EXPECT_NEAR(r.weights[0], 1.0, 1e-12);

  std::vector<Vec3<double>> red{{1, 0, 0}};
  std::vector<double> one{1.0};
  r = composite<double>(red, one, one, {0, 0, 0});
  EXPECT_NEAR(r.rgb.x, 0.6321205588285577, 1e-15);
  EXPECT_EQ(r.rgb.y, 0.0);

  std::vector<double> neg{-1.0};
  EXPECT_THROW(composite<double>(red, neg, one, {}), contract_error);
  EXPECT_THROW(composite<double>(c, one, one, {}), contract_error);
}

TEST(Composite, WeightConservation) {
  Rng rng(3);
  double worst = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    std::vector<Vec3<double>> c(n);
    std::vector<double> s(n), d(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::exp(uniform(rng, -6, 4));
      d[i] = uniform(rng, 0, 0.1);
    }
    auto r = composite<double>(c, s, d, {});
    double sum = r.transmittance;
    for (double w : r.weights) sum += w;
    worst = std::max(worst, std::abs(sum - 1));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Composite, OpacityMonotoneInDensity) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 8;
    std::vector<Vec3<double>> c(n);
    std::vector<double> s(n), d(n, 0.05);
    test::fill_uniform(rng, s, 0, 20);
    const double before = 1 - composite<double>(c, s, d, {}).transmittance;
    s[rng() % n] += uniform(rng, 0, 5);
    EXPECT_GE(1 - composite<double>(c, s, d, {}).transmittance, before);
  }
}

TEST(Composite, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 16;
    std::vector<double> cflat(3 * n), s(n), d(n);
    test::fill_uniform(rng, cflat, 0, 1);
    test::fill_uniform(rng, s, 0.1, 30);
    test::fill_uniform(rng, d, 0.005, 0.08);
    const Vec3<double> bg{1, 1, 1}, dp{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    auto colors = [&]() {
      std::vector<Vec3<double>> c(n);
      for (int i = 0; i < n; ++i) c[i] = {cflat[3 * i], cflat[3 * i + 1], cflat[3 * i + 2]};
      return c;
    };
    auto loss = [&]() { return dot(composite<double>(colors(), s, d, bg).rgb, dp); };
    std::vector<Vec3<double>> dc(n);
    std::vector<double> ds(n);
    composite_backward<double>(colors(), s, d, bg, dp, dc, ds);
    std::vector<double> dcf;
    for (auto& v : dc) dcf.insert(dcf.end(), {v.x, v.y, v.z});
    EXPECT_LT(test::relative_error(ds, test::finite_difference(s, loss)), 1e-5);
    EXPECT_LT(test::relative_error(dcf, test::finite_difference(cflat, loss)), 1e-5);
  }
}

TEST(Psnr, Examples) {
  Image a(4, 3, {0.2f, 0.2f, 0.2f}), b(4, 3, {0.2f, 0.2f, 0.2f});
  EXPECT_EQ(psnr(a, b), 99.0);
  EXPECT_NEAR(psnr(Image(4, 3, {0, 0, 0}), Image(4, 3, {1, 1, 1})), 0.0, 1e-12);
  EXPECT_NEAR(psnr(Image(4, 3, {0.5f, 0.5f, 0.5f}), Image(4, 3, {0.6f, 0.6f, 0.6f})), 20.0, 1e-5);
  EXPECT_THROW(psnr(a, Image(3, 4)), contract_error);
}

TEST(Ppm, RoundTripAndByteConversion) {
  EXPECT_EQ(to_byte(-0.2f), 0);
  EXPECT_EQ(to_byte(1.7f), 255);
  EXPECT_EQ(to_byte(0.5f), 128);
  Rng rng(6);
  Image img(5, 7);
  for (auto& v : img.rgb) v = static_cast<float>(rng() % 256) / 255.0f;
  const auto path = std::filesystem::temp_directory_path() / "nvv_ppm_roundtrip.ppm";
  write_ppm(path, img);
  auto back = read_ppm(path);
  ASSERT_EQ(back.width, 5);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_EQ(to_byte(back.rgb[i]), to_byte(img.rgb[i]));
  std::filesystem::remove(path);
  EXPECT_THROW(read_ppm(path), io_error);
}

FieldLayout tiny_layout() {
  FieldLayout l;
  l.coef_dims = {6, 6, 6};
  l.basis_dims = {{5, 5, 5}, {6, 6, 6}};
  l.basis_freqs = {1, 2};
  l.basis_channels = 2;
  l.mlp_hidden = {16, 16};
  l.dir_octaves = 1;
  return l;
}

TEST(RenderImage, ZeroDensityIsBackground) {
  auto f = FrameFields<float>::zeros(tiny_layout());
  // Zero MLP gives sigma = ln 2; push the density pre-activation far negative.
  f.mlp.bias(f.mlp.shape().layers() - 1)[3] = -200.0f;
  auto cam = look_at({0.5, 0.5, 2.5}, {0.5, 0.5, 0.5}, {0, 1, 0}, 12, 10, 45);
  auto img = render_image<float>(f, cam, 16, {0.25f, 0.5f, 0.75f});
  for (std::size_t p = 0; p < img.pixels(); ++p) EXPECT_EQ(img.pixel(p), (Vec3<float>{0.25f, 0.5f, 0.75f}));
}

TEST(RenderImage, DeterministicAndBatchInvariant) {
  Rng rng(7);
  auto f = FrameFields<float>::zeros(tiny_layout());
  test::fill_uniform(rng, f.coef.values(), -1, 1);
  for (auto& l : f.basis.levels()) test::fill_uniform(rng, l.grid.values(), -1, 1);
  f.mlp = TinyMlp<float>::glorot(f.mlp.shape(), rng);
  auto cam = look_at({2.5, 1.0, 1.5}, {0.5, 0.5, 0.5}, {0, 1, 0}, 20, 16, 40);
  auto a = render_image<float>(f, cam, 24, {1, 1, 1}, 4096);
  auto b = render_image<float>(f, cam, 24, {1, 1, 1}, 4096);
  auto c = render_image<float>(f, cam, 24, {1, 1, 1}, 1);
  auto d = render_image<float>(f, cam, 24, {1, 1, 1}, 37);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a, d);
}

}  // namespace
}  // namespace nvv
