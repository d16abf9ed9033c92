#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ncf/image.hpp"

namespace ncf {

enum class ShapeKind { Circle, Square, Triangle };

// Mask ids written by the synthetic generator: 0 for background, 1 + shape
// index for the object. Semantic classes are shapes, so the library never
// mixes colors of objects with different outlines.
inline constexpr int kBackgroundClass = 0;
constexpr int object_mask_id(ShapeKind shape) noexcept { return 1 + static_cast<int>(shape); }

struct SyntheticSample {
  std::string id;  // file stem, e.g. "c02_00017"
  RgbImage image;
  SegmentationMask mask;
  int label = 0;
};

struct SyntheticConfig {
  int classes = 3;
  int per_class = 100;
  std::uint64_t seed = 0;
  int size = 64;
};

// Class k is the pair (shape k mod 3, hue family k). Objects are filled shapes
// on low-saturation textured backgrounds; masks label
// the background and the object's shape.
// Throws InvalidArgument for classes outside [3,10] or per_class < 1.
std::vector<SyntheticSample> make_synthetic(const SyntheticConfig& config);

ShapeKind class_shape(int label) noexcept;
double class_hue(int label, int classes) noexcept;

// Directory layout: images/<id>.png, masks/<id>.pgm, labels.csv ("id,label").
void write_dataset(const std::filesystem::path& dir, std::span<const SyntheticSample> samples);

struct LabelEntry {
  std::string id;
  int label = 0;
};

// Rows sorted by id. Throws Format on malformed rows.
std::vector<LabelEntry> read_labels(const std::filesystem::path& csv);

// Reads images/ and masks/ for every labels.csv row; sorted by id.
std::vector<SyntheticSample> read_dataset(const std::filesystem::path& dir);

}  // namespace ncf
