#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "aldsr/image.hpp"
#include "support.hpp"

namespace aldsr {
namespace {

using test::TempDir;

double keys(double t) {
  const double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
  if (t < 2.0) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
  return 0.0;
}

// Direct 2D weighted sum over every input pixel (clamped), no separability.
Image resize_oracle(const Image& in, std::size_t ow, std::size_t oh) {
  Image out(ow, oh, in.channels);
  const double fx = double(in.width) / ow, fy = double(in.height) / oh;
  const double sx = std::max(fx, 1.0), sy = std::max(fy, 1.0);
  const long margin = 4 * static_cast<long>(std::ceil(std::max(sx, sy))) + 4;
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double cx = (x + 0.5) * fx - 0.5, cy = (y + 0.5) * fy - 0.5;
        double acc = 0.0, wsum = 0.0;
        for (long iy = -margin; iy < long(in.height) + margin; ++iy)
          for (long ix = -margin; ix < long(in.width) + margin; ++ix) {
            const double w = keys((cx - ix) / sx) / sx * keys((cy - iy) / sy) / sy;
            if (w == 0.0) continue;
            const long qy = std::clamp(iy, 0L, long(in.height) - 1);
            const long qx = std::clamp(ix, 0L, long(in.width) - 1);
            acc += w * in.at(c, qy, qx);
            wsum += w;
          }
        out.at(c, y, x) = acc / wsum;
      }
  return out;
}

double max_abs_diff(const Image& a, const Image& b) {
  EXPECT_EQ(a.width, b.width);
  EXPECT_EQ(a.height, b.height);
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

TEST(CubicKernel, Values) {
  EXPECT_EQ(cubic_kernel(0.0), 1.0);
  EXPECT_EQ(cubic_kernel(1.0), 0.0);
  EXPECT_EQ(cubic_kernel(2.0), 0.0);
  EXPECT_EQ(cubic_kernel(-2.5), 0.0);
  EXPECT_DOUBLE_EQ(cubic_kernel(0.5), keys(0.5));
  EXPECT_DOUBLE_EQ(cubic_kernel(-1.5), keys(1.5));
}

TEST(BicubicResize, PreservesConstants) {
  Image gray(13, 9, 3, 0.37);
  for (auto [w, h] : {std::pair{3, 2}, {13, 9}, {52, 36}, {7, 20}}) {
    const auto out = bicubic_resize(gray, w, h);
    for (double v : out.data) ASSERT_NEAR(v, 0.37, 1e-15);
  }
}

TEST(BicubicResize, SameSizeIsIdentity) {
  const auto img = test::random_image(11, 7, 1);
  EXPECT_LT(max_abs_diff(bicubic_resize(img, 11, 7), img), 1e-15);
}

TEST(BicubicResize, RampDownscaleMatchesNonSeparableOracle) {
  Image ramp(8, 8, 1);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) ramp.at(0, y, x) = (x + 8.0 * y) / 63.0;
  EXPECT_LT(max_abs_diff(bicubic_resize(ramp, 2, 2), resize_oracle(ramp, 2, 2)), 1e-10);
}

TEST(BicubicResize, RandomImagesMatchOracle) {
  const auto img = test::random_image(17, 12, 2);
  for (auto [w, h] : {std::pair{4, 3}, {68, 48}, {5, 30}, {9, 12}}) {
    EXPECT_LT(max_abs_diff(bicubic_resize(img, w, h), resize_oracle(img, w, h)), 1e-10) << w << "x" << h;
  }
}

// Straight step edges at every phase, both orientations, downscaled x2..x4.
TEST(BicubicResize, DownscaleStepRingingBound) {
  for (std::size_t f : {2, 3, 4})
    for (std::size_t edge = 1; edge < 24; ++edge)
      for (bool vertical : {true, false}) {
        Image img(24, 24, 1);
        for (std::size_t y = 0; y < 24; ++y)
          for (std::size_t x = 0; x < 24; ++x) img.at(0, y, x) = (vertical ? x : y) < edge ? 1.0 : 0.0;
        for (double v : bicubic_resize(img, 24 / f, 24 / f).data) {
          ASSERT_GE(v, -0.05) << f << " " << edge;
          ASSERT_LE(v, 1.05) << f << " " << edge;
        }
      }
}

// Keys' kernel dips to -2/27 at |t| = 4/3, so an upscaled step overshoots by at most that.
TEST(BicubicResize, UpscaleStepOvershootBound) {
  Image step(8, 4, 1);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 4; x < 8; ++x) step.at(0, y, x) = 1.0;
  const auto out = bicubic_resize(step, 32, 16);
  const auto [lo, hi] = std::minmax_element(out.data.begin(), out.data.end());
  EXPECT_GE(*lo, -2.0 / 27.0 - 1e-12);
  EXPECT_LE(*hi, 1.0 + 2.0 / 27.0 + 1e-12);
  EXPECT_LT(*lo, 0.0);  // ringing is present, not clamped away
  for (double v : quantize(out).data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Luma, WhiteBlackAndFormula) {
  EXPECT_NEAR(luma(1, 1, 1), 235.0 / 255.0, 1e-12);
  EXPECT_NEAR(luma(0, 0, 0), 16.0 / 255.0, 1e-12);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    const double r = u(rng), g = u(rng), b = u(rng);
    EXPECT_NEAR(luma(r, g, b), (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0, 1e-7);
  }
}

TEST(Luma, IsAffine) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    const double p[3] = {u(rng), u(rng), u(rng)}, q[3] = {u(rng), u(rng), u(rng)};
    const double a = u(rng);
    const double mixed = luma(a * p[0] + (1 - a) * q[0], a * p[1] + (1 - a) * q[1], a * p[2] + (1 - a) * q[2]);
    EXPECT_NEAR(mixed, a * luma(p[0], p[1], p[2]) + (1 - a) * luma(q[0], q[1], q[2]), 1e-7);
  }
}

TEST(Luma, PlaneMatchesPixelFormula) {
  const auto img = test::random_image(5, 4, 6);
  const auto y = rgb_to_y(img);
  ASSERT_EQ(y.channels, 1u);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      EXPECT_DOUBLE_EQ(y.at(0, r, c), luma(img.at(0, r, c), img.at(1, r, c), img.at(2, r, c)));
}

TEST(Png, RoundTripAndQuantization) {
  TempDir dir;
  const auto img = test::random_image(9, 6, 7);
  save_png(dir / "a.png", img);
  EXPECT_EQ(load_png(dir / "a.png"), img);

  Image gray = test::random_image(4, 3, 8, 1);
  save_png(dir / "g.png", gray);
  EXPECT_EQ(load_png(dir / "g.png", true), gray);
  const auto rgb = load_png(dir / "g.png");
  EXPECT_EQ(rgb.channels, 3u);
  EXPECT_EQ(rgb.at(2, 1, 1), gray.at(0, 1, 1));

  EXPECT_EQ(quantize_u8(-0.3), 0);
  EXPECT_EQ(quantize_u8(1.7), 255);
  EXPECT_EQ(quantize_u8(0.5 / 255.0), 1);
  EXPECT_THROW(load_png(dir / "missing.png"), DataError);
}

TEST(Crop, MultipleAndRange) {
  const Image img(101, 103);
  const auto c = crop_to_multiple(img, 4);
  EXPECT_EQ(c.width, 100u);
  EXPECT_EQ(c.height, 100u);
  EXPECT_THROW(crop(img, 100, 0, 2, 2), RangeError);
}

}  // namespace
}  // namespace aldsr
