#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ncf/image.hpp"

// Closed-form Monge-Kantorovich mapping between Gaussian color moments.
namespace ncf {

// Added to every covariance at the point where moments are computed.
inline constexpr double kCovarianceRegularizer = 1e-4;

struct Moments {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity() * kCovarianceRegularizer;

  bool operator==(const Moments&) const = default;
};

struct TransferMatrix {
  Mat3 m = Mat3::Identity();
};

// Population mean/covariance of a point set, plus the regularizer.
Moments moments_of_points(std::span<const Vec3> points);

Moments image_moments(const LabImage& img);
// Moments over pixels whose mask label equals class_id. Throws EmptyMask.
Moments image_moments(const LabImage& img, const SegmentationMask& mask, int class_id);

// Moments of a mixture sum_k w_k P_k given each part's regularized moments.
// Weights must be non-negative and sum to one.
Moments mix_moments(std::span<const std::pair<double, Moments>> parts);

struct SpdRoots {
  Mat3 sqrt;
  Mat3 inv_sqrt;
};

// Both roots from one symmetric eigendecomposition. Throws NotSPD.
SpdRoots spd_roots(const Mat3& a);
Mat3 spd_sqrt(const Mat3& a);

TransferMatrix mk_transfer(const Moments& src, const Moments& dst);

// x'(p) = T (x(p) - mu_src) + mu_dst, no clamping.
LabImage apply_transfer(const LabImage& img, const TransferMatrix& t, const Vec3& mu_src, const Vec3& mu_dst);

// Relative Frobenius residual ||T S T^T - D|| / ||D||.
double transfer_residual(const TransferMatrix& t, const Mat3& src_cov, const Mat3& dst_cov);

}  // namespace ncf
