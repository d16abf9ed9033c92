#include "ncf/colorspace.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace ncf::color {

namespace {

constexpr double kDelta = kLabDelta;
constexpr double kDelta3 = kDelta * kDelta * kDelta;
constexpr double kLinearSlope = 1.0 / (3.0 * kDelta * kDelta);

// Cube root of a positive normal double: exponent-thirding seed, then three
// Halley steps (cubic convergence, error below 1e-15). About twice as fast
// as std::cbrt or std::pow here.
double cbrt_pos(double x) {
  double y = std::bit_cast<double>(std::bit_cast<std::uint64_t>(x) / 3 + 0x2A9F7893782DA1CEULL);
  for (int i = 0; i < 3; ++i) {
    const double y3 = y * y * y;
    y = y * (y3 + 2.0 * x) / (2.0 * y3 + x);
  }
  return y;
}

double lab_f(double t) { return t > kDelta3 ? cbrt_pos(t) : t * kLinearSlope + 4.0 / 29.0; }

double lab_f_derivative(double t) {
  if (t >= kDelta3) {
    const double c = cbrt_pos(t);
    return 1.0 / (3.0 * c * c);
  }
  return kLinearSlope;
}

double lab_f_inverse(double u) { return u > kDelta ? u * u * u : (u - 4.0 / 29.0) / kLinearSlope; }

double lab_f_inverse_derivative(double u) { return u >= kDelta ? 3.0 * u * u : 1.0 / kLinearSlope; }

double srgb_to_linear_derivative(double c) {
  if (c >= kSrgbEncodedKnee) {
    return 2.4 / 1.055 * std::pow((c + 0.055) / 1.055, 1.4);
  }
  return 1.0 / 12.92;
}

// l^(1/2.4) = c^(5/4) with c = cbrt(l).
double pow_5_12(double l) {
  const double c = cbrt_pos(l);
  return c * std::sqrt(std::sqrt(c));
}

// Encoded value and its derivative; junction takes the right-limit branch.
std::pair<double, double> linear_to_srgb_with_derivative(double l) {
  if (l >= kSrgbLinearKnee) {
    const double r = pow_5_12(l);
    return {1.055 * r - 0.055, 1.055 / 2.4 * r / l};
  }
  return {12.92 * l, 12.92};
}

// d(fx,fy,fz)/d(L,a,b)
Mat3 f_of_lab_jacobian() {
  Mat3 m;
  m << 1.0 / 116.0, 1.0 / 500.0, 0.0,
       1.0 / 116.0, 0.0, 0.0,
       1.0 / 116.0, 0.0, -1.0 / 200.0;
  return m;
}

Vec3 lab_to_linear(const Vec3& lab, Vec3* f_out = nullptr) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  if (f_out != nullptr) {
    *f_out = Vec3(fx, fy, fz);
  }
  const Vec3 xyz(kXn * lab_f_inverse(fx), kYn * lab_f_inverse(fy), kZn * lab_f_inverse(fz));
  return xyz_to_rgb_matrix() * xyz;
}

}  // namespace

const Mat3& rgb_to_xyz_matrix() {
  static const Mat3 m = [] {
    Mat3 r;
    r << 0.4124564, 0.3575761, 0.1804375,
         0.2126729, 0.7151522, 0.0721750,
         0.0193339, 0.1191920, 0.9503041;
    return r;
  }();
  return m;
}

const Mat3& xyz_to_rgb_matrix() {
  static const Mat3 m = rgb_to_xyz_matrix().inverse();
  return m;
}

double srgb_to_linear(double c) {
  return c > kSrgbEncodedKnee ? std::pow((c + 0.055) / 1.055, 2.4) : c / 12.92;
}

double linear_to_srgb(double l) {
  return l > kSrgbLinearKnee ? 1.055 * pow_5_12(l) - 0.055 : 12.92 * l;
}

Vec3 rgb_to_lab(const Vec3& rgb) {
  const Vec3 lin(srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2]));
  const Vec3 xyz = rgb_to_xyz_matrix() * lin;
  const double fx = lab_f(xyz[0] / kXn);
  const double fy = lab_f(xyz[1] / kYn);
  const double fz = lab_f(xyz[2] / kZn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Vec3 lab_to_rgb_unclamped(const Vec3& lab) {
  const Vec3 lin = lab_to_linear(lab);
  return {linear_to_srgb(lin[0]), linear_to_srgb(lin[1]), linear_to_srgb(lin[2])};
}

Vec3 lab_to_rgb(const Vec3& lab, int* clipped) {
  Vec3 rgb = lab_to_rgb_unclamped(lab);
  int n = 0;
  for (int c = 0; c < 3; ++c) {
    if (rgb[c] < 0.0 || rgb[c] > 1.0) {
      rgb[c] = std::clamp(rgb[c], 0.0, 1.0);
      ++n;
    }
  }
  if (clipped != nullptr) {
    *clipped = n;
  }
  return rgb;
}

Vec3 lab_to_rgb_with_jacobian(const Vec3& lab, Mat3& jacobian, int* clipped) {
  Vec3 f;
  const Vec3 lin = lab_to_linear(lab, &f);
  const Vec3 df(kXn * lab_f_inverse_derivative(f[0]), kYn * lab_f_inverse_derivative(f[1]),
                kZn * lab_f_inverse_derivative(f[2]));
  const Mat3 dlin = xyz_to_rgb_matrix() * df.asDiagonal() * f_of_lab_jacobian();
  Vec3 rgb;
  int n = 0;
  for (int c = 0; c < 3; ++c) {
    const auto [encoded, slope] = linear_to_srgb_with_derivative(lin[c]);
    if (encoded < 0.0 || encoded > 1.0) {
      rgb[c] = std::clamp(encoded, 0.0, 1.0);
      jacobian.row(c).setZero();
      ++n;
    } else {
      rgb[c] = encoded;
      jacobian.row(c) = slope * dlin.row(c);
    }
  }
  if (clipped != nullptr) *clipped = n;
  return rgb;
}

Mat3 lab_to_rgb_jacobian(const Vec3& lab) {
  Mat3 j;
  lab_to_rgb_with_jacobian(lab, j);
  return j;
}

Mat3 rgb_to_lab_jacobian(const Vec3& rgb) {
  const Vec3 lin(srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2]));
  const Vec3 dlin(srgb_to_linear_derivative(rgb[0]), srgb_to_linear_derivative(rgb[1]),
                  srgb_to_linear_derivative(rgb[2]));
  const Vec3 xyz = rgb_to_xyz_matrix() * lin;
  const Vec3 dfdt(lab_f_derivative(xyz[0] / kXn) / kXn, lab_f_derivative(xyz[1] / kYn) / kYn,
                  lab_f_derivative(xyz[2] / kZn) / kZn);
  Mat3 lab_of_f;
  lab_of_f << 0.0, 116.0, 0.0,
              500.0, -500.0, 0.0,
              0.0, 200.0, -200.0;
  return lab_of_f * dfdt.asDiagonal() * rgb_to_xyz_matrix() * dlin.asDiagonal();
}

LabImage rgb_to_lab(const RgbImage& img) {
  LabImage out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(),
                 [](const Vec3& p) { return rgb_to_lab(p); });
  return out;
}

LabToRgbResult lab_to_rgb(const LabImage& img) {
  LabToRgbResult out;
  out.rgb.width = img.width;
  out.rgb.height = img.height;
  out.rgb.pixels.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    int clipped = 0;
    out.rgb.pixels[i] = lab_to_rgb(img.pixels[i], &clipped);
    out.clipped_channels += static_cast<std::size_t>(clipped);
  }
  return out;
}

}  // namespace ncf::color
