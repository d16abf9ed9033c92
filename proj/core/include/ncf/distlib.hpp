#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncf/image.hpp"
#include "ncf/rng.hpp"
#include "ncf/transport.hpp"

namespace ncf {

// Fixed 16x16x16 grid over the Lab box L in [0,100], a,b in [-128,127].
// Values outside the box fall into the nearest edge bin.
struct LabGrid {
  static constexpr int kBinsPerAxis = 16;
  static constexpr int kBinCount = kBinsPerAxis * kBinsPerAxis * kBinsPerAxis;
  static constexpr double kLMin = 0.0;
  static constexpr double kLMax = 100.0;
  static constexpr double kABMin = -128.0;
  static constexpr double kABMax = 127.0;

  static int bin_of(const Vec3& lab) noexcept;
  static Vec3 center(int bin) noexcept;
};

// Normalized, sparse color histogram over LabGrid. Entries are sorted by bin
// and carry strictly positive weights summing to one.
class ColorDistribution {
 public:
  using Entry = std::pair<std::uint16_t, double>;

  ColorDistribution() = default;

  // Normalizes non-negative masses. Throws InvalidArgument if all are zero.
  static ColorDistribution from_masses(std::span<const double> dense_masses);
  static ColorDistribution from_entries(std::vector<Entry> entries);
  // Also records the exact moments of the pixels.
  static ColorDistribution from_pixels(std::span<const Vec3> lab_pixels);
  static ColorDistribution point_mass(int bin);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }
  double weight(int bin) const noexcept;
  double total() const noexcept;

  // Moments of the source pixels, free of binning error. Absent for
  // histograms that were not built from pixels.
  const std::optional<Moments>& pixel_moments() const noexcept { return pixel_moments_; }
  void set_pixel_moments(std::optional<Moments> m) { pixel_moments_ = std::move(m); }

  friend bool operator==(const ColorDistribution&, const ColorDistribution&) = default;

 private:
  std::vector<Entry> entries_;
  std::optional<Moments> pixel_moments_;
};

// H = sum_k w_k c_k. Throws BadWeights if the weights are negative or do not
// sum to one within 1e-6.
ColorDistribution fuse_distributions(std::span<const std::pair<double, const ColorDistribution*>> parts);

// Exact moments of the histogram at bin centers, regularized.
Moments moments_of_distribution(const ColorDistribution& d);

// The pixel moments when recorded, otherwise moments_of_distribution.
Moments color_moments(const ColorDistribution& d);

inline constexpr std::size_t kDistributionsPerClass = 20;

class DistributionLibrary {
 public:
  static constexpr int kFormatVersion = 1;

  DistributionLibrary() = default;

  // Throws InvalidArgument unless exactly kDistributionsPerClass entries are given.
  void add_class(int class_id, std::vector<ColorDistribution> distributions, std::string name = {});

  std::size_t num_classes() const noexcept { return classes_.size(); }
  bool empty() const noexcept { return classes_.empty(); }
  bool contains(int class_id) const noexcept { return classes_.contains(class_id); }
  std::vector<int> class_ids() const;
  const std::string& name(int class_id) const;

  // Throws UnknownClass.
  const std::vector<ColorDistribution>& at(int class_id) const;

  nlohmann::json to_json() const;
  static DistributionLibrary from_json(const nlohmann::json& j);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static DistributionLibrary load(const std::filesystem::path& path);

 private:
  std::map<int, std::vector<ColorDistribution>> classes_;
  std::map<int, std::string> names_;
};

struct SampledDistribution {
  std::size_t index = 0;  // 0-based slot within the class
  const ColorDistribution* distribution = nullptr;
};

// Uniform over the class's slots. Throws UnknownClass.
SampledDistribution sample_distribution(const DistributionLibrary& lib, int class_id, Rng& rng);

struct LabeledImage {
  RgbImage image;
  SegmentationMask mask;
};

struct LibraryConfig {
  int palette_size = 5;
  std::size_t min_region_pixels = 64;
  std::size_t n_clusters = kDistributionsPerClass;
};

// Throws EmptyCorpus if no (image, class) region reaches min_region_pixels,
// ShapeMismatch if a mask does not match its image.
DistributionLibrary build_library(std::span<const LabeledImage> corpus, const LibraryConfig& config,
                                  std::uint64_t seed);

}  // namespace ncf
