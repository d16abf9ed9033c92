#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ncf/image.hpp"
#include "ncf/rng.hpp"

namespace ncf::test {

inline Mat3 random_spd(Rng& rng, double min_eig = 0.05, double max_eig = 400.0) {
  Mat3 g;
  for (int i = 0; i < 9; ++i) g(i / 3, i % 3) = standard_normal(rng);
  Eigen::HouseholderQR<Mat3> qr(g);
  const Mat3 q = qr.householderQ();
  Vec3 eig;
  for (int i = 0; i < 3; ++i) eig[i] = std::exp(uniform(rng, std::log(min_eig), std::log(max_eig)));
  Mat3 a = q * eig.asDiagonal() * q.transpose();
  return 0.5 * (a + a.transpose());
}

inline RgbImage random_rgb(Rng& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
  RgbImage img(w, h);
  for (auto& p : img.pixels) p = Vec3(uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi));
  return img;
}

inline double rel_frobenius(const Mat3& a, const Mat3& b) { return (a - b).norm() / b.norm(); }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ncf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ncf::test

#include <span>

#include "ncf/toy_classifier.hpp"

namespace ncf::test {

// Smallest |pre-activation| among the conv outputs that read pixel (x, y),
// recomputed from the documented parameter layout. Probes whose value is below
// a margin sit near a rectifier kink.
inline double kink_distance(const ToyClassifier& model, const RgbImage& img, int x, int y) {
  const std::span<const float> p = model.parameters();
  const int n = ToyClassifier::kInputSize;
  const std::size_t bias_offset = 8 * 3 * 9;
  double nearest = std::numeric_limits<double>::infinity();
  for (int oy = y - 1; oy <= y + 1; ++oy) {
    for (int ox = x - 1; ox <= x + 1; ++ox) {
      if (ox < 0 || oy < 0 || ox >= n || oy >= n) continue;
      for (int f = 0; f < 8; ++f) {
        double a = p[bias_offset + f];
        for (int c = 0; c < 3; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - 1, iy = oy + ky - 1;
              if (ix < 0 || iy < 0 || ix >= n || iy >= n) continue;
              a += static_cast<double>(p[((f * 3 + c) * 3 + ky) * 3 + kx]) * (img.at(ix, iy)[c] - 0.5);
            }
          }
        }
        nearest = std::min(nearest, std::abs(a));
      }
    }
  }
  return nearest;
}

}  // namespace ncf::test

namespace ncf::test {

// Direct, loop-by-loop evaluation of the toy architecture.
inline Eigen::VectorXd reference_logits(const ToyClassifier& model, const RgbImage& img) {
  const std::span<const float> p = model.parameters();
  const int n = ToyClassifier::kInputSize;
  const std::size_t bias_offset = 8 * 3 * 9, fc_offset = bias_offset + 8;
  const std::size_t features = ToyClassifier::kFeatures;
  std::vector<double> pooled(features, 0.0);
  for (int f = 0; f < 8; ++f) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double a = p[bias_offset + f];
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - 1, iy = y + ky - 1;
              if (ix < 0 || iy < 0 || ix >= n || iy >= n) continue;
              a += static_cast<double>(p[((f * 3 + c) * 3 + ky) * 3 + kx]) * (img.at(ix, iy)[c] - 0.5);
            }
        pooled[(static_cast<std::size_t>(f) * 16 + y / 4) * 16 + x / 4] += std::max(a, 0.0) / 16.0;
      }
    }
  }
  const std::size_t classes = model.num_classes();
  Eigen::VectorXd z(static_cast<Eigen::Index>(classes));
  for (std::size_t k = 0; k < classes; ++k) {
    double s = p[fc_offset + classes * features + k];
    for (std::size_t i = 0; i < features; ++i) s += static_cast<double>(p[fc_offset + k * features + i]) * pooled[i];
    z[static_cast<Eigen::Index>(k)] = s;
  }
  return z;
}

}  // namespace ncf::test
