#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "ncf/error.hpp"

namespace ncf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct RgbTag {};
struct LabTag {};

// Row-major three-channel image of doubles. The tag distinguishes the color
// space so RGB and Lab buffers cannot be mixed up at call sites.
template <typename Space>
struct Image3 {
  int width = 0;
  int height = 0;
  std::vector<Vec3> pixels;

  Image3() = default;
  Image3(int w, int h, const Vec3& fill = Vec3::Zero())
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w < 1 || h < 1) {
      throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
    }
  }

  std::size_t size() const noexcept { return pixels.size(); }
  bool empty() const noexcept { return pixels.empty(); }

  Vec3& at(int x, int y) { return pixels[index(x, y)]; }
  const Vec3& at(int x, int y) const { return pixels[index(x, y)]; }

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }

  bool same_shape(int w, int h) const noexcept { return width == w && height == h; }

  template <typename Other>
  bool same_shape(const Image3<Other>& o) const noexcept {
    return width == o.width && height == o.height;
  }

  friend bool operator==(const Image3& a, const Image3& b) {
    return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
  }
};

using RgbImage = Image3<RgbTag>;
using LabImage = Image3<LabTag>;

// Per-pixel integer class labels, e.g. an indexed semantic segmentation.
struct SegmentationMask {
  int width = 0;
  int height = 0;
  std::vector<int> labels;

  SegmentationMask() = default;
  SegmentationMask(int w, int h, int fill = 0)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w < 1 || h < 1) {
      throw Error(ErrorCode::InvalidArgument, "mask dimensions must be positive");
    }
  }

  std::size_t size() const noexcept { return labels.size(); }
  int& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  template <typename Space>
  bool matches(const Image3<Space>& img) const noexcept {
    return width == img.width && height == img.height;
  }
};

}  // namespace ncf
