#pragma once

#include <cstddef>

#include "ncf/image.hpp"

// sRGB <-> CIELab under the D65 illuminant and the 2 degree observer.
//
// The sRGB->XYZ matrix is the IEC 61966-2-1 primaries matrix:
//   0.4124564 0.3575761 0.1804375
//   0.2126729 0.7151522 0.0721750
//   0.0193339 0.1191920 0.9503041
// The reference white is taken as the image of RGB (1,1,1) under that matrix,
// (Xn, Yn, Zn) = (0.9504700, 1.0000001, 1.0888295), so sRGB white maps to
// Lab (100, 0, 0) exactly. XYZ->sRGB uses the numerical inverse of the
// matrix above, so the round trip is exact up to rounding for in-gamut colors.
namespace ncf::color {

inline constexpr double kXn = 0.4124564 + 0.3575761 + 0.1804375;
inline constexpr double kYn = 0.2126729 + 0.7151522 + 0.0721750;
inline constexpr double kZn = 0.0193339 + 0.1191920 + 0.9503041;

// Piecewise junctions, exposed so tests can stay away from them.
inline constexpr double kSrgbEncodedKnee = 0.04045;
inline constexpr double kSrgbLinearKnee = 0.0031308;
inline constexpr double kLabDelta = 6.0 / 29.0;

const Mat3& rgb_to_xyz_matrix();
const Mat3& xyz_to_rgb_matrix();

double srgb_to_linear(double c);
double linear_to_srgb(double l);

Vec3 rgb_to_lab(const Vec3& rgb);

// Unclamped inverse. Values may leave [0,1] for out-of-gamut Lab colors.
Vec3 lab_to_rgb_unclamped(const Vec3& lab);

// Clamped inverse; `clipped` receives the number of channels that were clamped.
Vec3 lab_to_rgb(const Vec3& lab, int* clipped = nullptr);

// d(R,G,B)/d(L,a,b) of the clamped map. Junctions use the right-limit
// branch; rows of clamped channels are zero.
Mat3 lab_to_rgb_jacobian(const Vec3& lab);

// Clamped conversion and its Jacobian in one pass.
Vec3 lab_to_rgb_with_jacobian(const Vec3& lab, Mat3& jacobian, int* clipped = nullptr);

// d(L,a,b)/d(R,G,B), with the same junction convention.
Mat3 rgb_to_lab_jacobian(const Vec3& rgb);

LabImage rgb_to_lab(const RgbImage& img);

struct LabToRgbResult {
  RgbImage rgb;
  std::size_t clipped_channels = 0;

  // Fraction of clamped channels over all 3*W*H channels.
  double clip_fraction() const noexcept {
    return rgb.empty() ? 0.0 : static_cast<double>(clipped_channels) / (3.0 * static_cast<double>(rgb.size()));
  }
};

LabToRgbResult lab_to_rgb(const LabImage& img);

}  // namespace ncf::color
