#include "ncf/transport.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace ncf {

Moments moments_of_points(std::span<const Vec3> points) {
  if (points.empty()) {
    throw Error(ErrorCode::EmptyMask, "no pixels selected for moment computation");
  }
  const double n = static_cast<double>(points.size());
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= n;
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= n;
  cov += Mat3::Identity() * kCovarianceRegularizer;
  return {mean, cov};
}

Moments image_moments(const LabImage& img) { return moments_of_points(img.pixels); }

Moments image_moments(const LabImage& img, const SegmentationMask& mask, int class_id) {
  if (!mask.matches(img)) {
    throw Error(ErrorCode::ShapeMismatch, "mask and image dimensions differ");
  }
  std::vector<Vec3> selected;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (mask.labels[i] == class_id) selected.push_back(img.pixels[i]);
  }
  return moments_of_points(selected);
}

Moments mix_moments(std::span<const std::pair<double, Moments>> parts) {
  Vec3 mean = Vec3::Zero();
  double total = 0.0;
  for (const auto& [w, m] : parts) {
    if (w < 0.0) throw Error(ErrorCode::BadWeights, "negative mixture weight");
    mean += w * m.mean;
    total += w;
  }
  if (parts.empty() || std::abs(total - 1.0) > 1e-6) {
    throw Error(ErrorCode::BadWeights, "mixture weights must sum to one");
  }
  Mat3 cov = Mat3::Zero();
  for (const auto& [w, m] : parts) {
    const Vec3 d = m.mean - mean;
    cov += w * (m.cov - Mat3::Identity() * kCovarianceRegularizer + d * d.transpose());
  }
  cov += Mat3::Identity() * kCovarianceRegularizer;
  return {mean, cov};
}

SpdRoots spd_roots(const Mat3& a) {
  const double norm = a.norm();
  if (!a.allFinite() || (a - a.transpose()).norm() > 1e-9 * norm) {
    throw Error(ErrorCode::NotSPD, "matrix is not symmetric");
  }
  const Mat3 sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorCode::NotSPD, "eigendecomposition failed");
  }
  const Vec3 lambda = eig.eigenvalues();
  if (lambda.minCoeff() <= 0.0) {
    throw Error(ErrorCode::NotSPD, "matrix has a non-positive eigenvalue");
  }
  const Mat3& q = eig.eigenvectors();
  const Vec3 root = lambda.cwiseSqrt();
  return {q * root.asDiagonal() * q.transpose(), q * root.cwiseInverse().asDiagonal() * q.transpose()};
}

Mat3 spd_sqrt(const Mat3& a) { return spd_roots(a).sqrt; }

TransferMatrix mk_transfer(const Moments& src, const Moments& dst) {
  const SpdRoots s = spd_roots(src.cov);
  Mat3 inner = s.sqrt * dst.cov * s.sqrt;
  inner = 0.5 * (inner + inner.transpose());
  const Mat3 middle = spd_sqrt(inner);
  Mat3 t = s.inv_sqrt * middle * s.inv_sqrt;
  return {0.5 * (t + t.transpose())};
}

LabImage apply_transfer(const LabImage& img, const TransferMatrix& t, const Vec3& mu_src, const Vec3& mu_dst) {
  // T (x - mu_src) + mu_dst == T x + offset; identity maps stay bit-exact.
  const Vec3 offset = mu_dst - t.m * mu_src;
  LabImage out = img;
  for (auto& p : out.pixels) {
    p = t.m * p + offset;
  }
  return out;
}

double transfer_residual(const TransferMatrix& t, const Mat3& src_cov, const Mat3& dst_cov) {
  return (t.m * src_cov * t.m.transpose() - dst_cov).norm() / dst_cov.norm();
}

}  // namespace ncf
