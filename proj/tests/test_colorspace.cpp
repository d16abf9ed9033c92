#include <doctest.h>

#include <cmath>

#include "ncf/colorspace.hpp"
#include "support.hpp"

using namespace ncf;
namespace c = ncf::color;

namespace {

// Textbook sRGB -> Lab written out independently of the library, with the
// published D65 white (0.95047, 1, 1.08883).
Vec3 reference_rgb_to_lab(const Vec3& rgb) {
  auto lin = [](double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); };
  const double r = lin(rgb[0]), g = lin(rgb[1]), b = lin(rgb[2]);
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  auto f = [](double t) {
    const double e = 216.0 / 24389.0, k = 24389.0 / 27.0;
    return t > e ? std::cbrt(t) : (k * t + 16.0) / 116.0;
  };
  const double fx = f(x / 0.95047), fy = f(y / 1.0), fz = f(z / 1.08883);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Gray level of Lab (L,0,0): invert L for Y, then apply the sRGB encoding.
double reference_gray_from_l(double l) {
  const double fy = (l + 16.0) / 116.0;
  const double y = fy > 6.0 / 29.0 ? fy * fy * fy : 3.0 * (6.0 / 29.0) * (6.0 / 29.0) * (fy - 4.0 / 29.0);
  return y <= 0.0031308 ? 12.92 * y : 1.055 * std::pow(y, 1.0 / 2.4) - 0.055;
}

Mat3 fd_lab_to_rgb(const Vec3& lab, double h) {
  Mat3 j;
  for (int k = 0; k < 3; ++k) {
    Vec3 p = lab, m = lab;
    p[k] += h;
    m[k] -= h;
    j.col(k) = (c::lab_to_rgb_unclamped(p) - c::lab_to_rgb_unclamped(m)) / (2.0 * h);
  }
  return j;
}

Mat3 fd_rgb_to_lab(const Vec3& rgb, double h) {
  Mat3 j;
  for (int k = 0; k < 3; ++k) {
    Vec3 p = rgb, m = rgb;
    p[k] += h;
    m[k] -= h;
    j.col(k) = (c::rgb_to_lab(p) - c::rgb_to_lab(m)) / (2.0 * h);
  }
  return j;
}

// Keeps probes at least `margin` away from the sRGB knee and the Lab cube-root junction.
bool far_from_junctions(const Vec3& rgb, double margin) {
  for (int k = 0; k < 3; ++k) {
    if (std::abs(rgb[k] - c::kSrgbEncodedKnee) < margin || rgb[k] < margin || rgb[k] > 1.0 - margin) return false;
  }
  Vec3 lin(c::srgb_to_linear(rgb[0]), c::srgb_to_linear(rgb[1]), c::srgb_to_linear(rgb[2]));
  const Vec3 xyz = c::rgb_to_xyz_matrix() * lin;
  const Vec3 white(c::kXn, c::kYn, c::kZn);
  const double knee = c::kLabDelta * c::kLabDelta * c::kLabDelta;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(xyz[k] / white[k] - knee) < margin) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("the independent reference reproduces the published red value") {
  const Vec3 ref = reference_rgb_to_lab(Vec3(1, 0, 0));
  CHECK(std::abs(ref[0] - 53.24) <= 0.01);
  CHECK(std::abs(ref[1] - 80.09) <= 0.01);
  CHECK(std::abs(ref[2] - 67.20) <= 0.01);
}

TEST_CASE("rgb_to_lab fixed points and red") {
  const Vec3 white = c::rgb_to_lab(Vec3(1, 1, 1));
  CHECK(std::abs(white[0] - 100.0) <= 1e-4);
  CHECK(std::abs(white[1]) <= 1e-4);
  CHECK(std::abs(white[2]) <= 1e-4);

  const Vec3 black = c::rgb_to_lab(Vec3(0, 0, 0));
  CHECK(black.cwiseAbs().maxCoeff() == 0.0);

  const Vec3 red = c::rgb_to_lab(Vec3(1, 0, 0));
  CHECK(std::abs(red[0] - 53.24) <= 0.01);
  CHECK(std::abs(red[1] - 80.09) <= 0.01);
  CHECK(std::abs(red[2] - 67.20) <= 0.01);
}

TEST_CASE("rgb_to_lab agrees with the textbook formulas on random colors") {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 rgb(uniform01(rng), uniform01(rng), uniform01(rng));
    // The two white points differ in the 6th digit, so agreement is ~1e-3.
    CHECK((c::rgb_to_lab(rgb) - reference_rgb_to_lab(rgb)).cwiseAbs().maxCoeff() <= 5e-3);
  }
}

TEST_CASE("lab_to_rgb examples") {
  const Vec3 white = c::lab_to_rgb(Vec3(100, 0, 0));
  CHECK((white - Vec3::Ones()).cwiseAbs().maxCoeff() <= 1.0 / 255.0);

  const double gray = reference_gray_from_l(50.0);
  CHECK(std::abs(gray - 0.4663) <= 1e-3);
  const Vec3 mid = c::lab_to_rgb(Vec3(50, 0, 0));
  for (int k = 0; k < 3; ++k) CHECK(std::abs(mid[k] - 0.4663) <= 1e-3);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(mid[k] - gray) <= 1e-6);
}

TEST_CASE("round trip over 10^4 random in-gamut pixels") {
  Rng rng(5);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 rgb(uniform01(rng), uniform01(rng), uniform01(rng));
    worst = std::max(worst, (c::lab_to_rgb(c::rgb_to_lab(rgb)) - rgb).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1.0 / 255.0);
  CHECK(worst <= 1e-9);
}

TEST_CASE("image conversions match the per-pixel functions and count clipping") {
  Rng rng(8);
  const RgbImage img = test::random_rgb(rng, 7, 5);
  const LabImage lab = c::rgb_to_lab(img);
  REQUIRE(lab.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(lab.pixels[i] == c::rgb_to_lab(img.pixels[i]));

  LabImage out_of_gamut(2, 1);
  out_of_gamut.pixels[0] = Vec3(50, 0, 0);
  out_of_gamut.pixels[1] = Vec3(60, 120, 0);  // saturated magenta-red, beyond sRGB
  const auto back = c::lab_to_rgb(out_of_gamut);
  int clipped = 0;
  c::lab_to_rgb(out_of_gamut.pixels[1], &clipped);
  CHECK(clipped > 0);
  CHECK(back.clipped_channels == static_cast<std::size_t>(clipped));
  CHECK(back.clip_fraction() == doctest::Approx(clipped / 6.0));
  for (const auto& p : back.rgb.pixels) {
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.maxCoeff() <= 1.0);
  }
}

TEST_CASE("conversion is deterministic") {
  Rng rng(3);
  const RgbImage img = test::random_rgb(rng, 16, 16);
  CHECK(c::rgb_to_lab(img) == c::rgb_to_lab(img));
  const LabImage lab = c::rgb_to_lab(img);
  CHECK(c::lab_to_rgb(lab).rgb == c::lab_to_rgb(lab).rgb);
}

TEST_CASE("lab_to_rgb Jacobian at (50,0,0) matches central differences") {
  const Vec3 lab(50, 0, 0);
  const Mat3 analytic = c::lab_to_rgb_jacobian(lab);
  const Mat3 fd = fd_lab_to_rgb(lab, 1e-3);
  CHECK(test::rel_frobenius(analytic, fd) <= 1e-4);
  for (int i = 0; i < 9; ++i) {
    const double a = analytic(i / 3, i % 3), f = fd(i / 3, i % 3);
    CHECK(std::abs(a - f) <= 1e-4 * std::max(std::abs(f), 1e-3));
  }

  Mat3 j2;
  const Vec3 rgb = c::lab_to_rgb_with_jacobian(lab, j2);
  CHECK(j2 == analytic);
  CHECK(rgb == c::lab_to_rgb(lab));
}

TEST_CASE("Jacobians are mutual inverses at interior pixels") {
  Rng rng(21);
  int probes = 0;
  while (probes < 500) {
    const Vec3 rgb(uniform(rng, 0.02, 0.98), uniform(rng, 0.02, 0.98), uniform(rng, 0.02, 0.98));
    if (!far_from_junctions(rgb, 1e-3)) continue;
    ++probes;
    const Mat3 prod = c::lab_to_rgb_jacobian(c::rgb_to_lab(rgb)) * c::rgb_to_lab_jacobian(rgb);
    CHECK((prod - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("Jacobians match finite differences away from junctions") {
  Rng rng(99);
  int probes = 0;
  while (probes < 300) {
    const Vec3 rgb(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0));
    if (!far_from_junctions(rgb, 1e-3)) continue;
    ++probes;
    const Vec3 lab = c::rgb_to_lab(rgb);
    CHECK(test::rel_frobenius(c::lab_to_rgb_jacobian(lab), fd_lab_to_rgb(lab, 1e-4)) <= 1e-3);
    CHECK(test::rel_frobenius(c::rgb_to_lab_jacobian(rgb), fd_rgb_to_lab(rgb, 1e-6)) <= 1e-3);
  }
}

TEST_CASE("clamped channels have zero Jacobian rows") {
  const Vec3 lab(60, 120, 0);
  const Vec3 raw = c::lab_to_rgb_unclamped(lab);
  REQUIRE(raw[0] > 1.0);
  const Mat3 j = c::lab_to_rgb_jacobian(lab);
  CHECK(j.row(0).cwiseAbs().maxCoeff() == 0.0);
  for (int r = 1; r < 3; ++r) {
    if (raw[r] >= 0.0 && raw[r] <= 1.0) CHECK(j.row(r).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("junctions use the right-limit branch") {
  // The sRGB curve's two pieces meet with slopes about 1.4% apart, so one-sided
  // differences at h=1e-4 tell the branches apart.
  const Vec3 rgb(c::kSrgbEncodedKnee, 0.5, 0.5);
  const Mat3 j = c::rgb_to_lab_jacobian(rgb);
  const double h = 1e-4;
  Vec3 up = rgb, down = rgb;
  up[0] += h;
  down[0] -= h;
  const Vec3 right = (c::rgb_to_lab(up) - c::rgb_to_lab(rgb)) / h;
  const Vec3 left = (c::rgb_to_lab(rgb) - c::rgb_to_lab(down)) / h;
  CHECK((j.col(0) - right).norm() <= 2e-3 * right.norm());
  CHECK((j.col(0) - left).norm() > 5e-3 * left.norm());
}
