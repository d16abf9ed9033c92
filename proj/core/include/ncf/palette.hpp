#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ncf/distlib.hpp"

namespace ncf {

// A region's dominant colors (Lab) and their mass fractions.
struct Palette {
  std::vector<Vec3> colors;
  std::vector<double> proportions;

  std::size_t size() const noexcept { return colors.size(); }
};

// k-means with k-means++ seeding; at most 50 Lloyd iterations, stopping early
// once no centroid moves more than 1e-4. The cluster count is clamped to the
// number of distinct pixels and empty clusters are dropped.
Palette extract_palette(std::span<const Vec3> region_pixels, int palette_size, std::uint64_t seed);

// Greedy one-to-one matching by ascending Lab distance; each matched pair
// costs its distance times the mean of the two proportions. Colors left over
// in the larger palette cost half their proportion times the distance to the
// nearest color of the other palette.
double palette_distance(const Palette& p, const Palette& q);

// Average-linkage agglomerative clustering of a symmetric distance matrix down
// to min(n_clusters, n) clusters. Ties merge the lexicographically smallest
// pair. Clusters are returned ordered by their smallest member, members sorted.
std::vector<std::vector<std::size_t>> average_linkage(const Eigen::MatrixXd& distances, std::size_t n_clusters);

struct PaletteSample {
  Palette palette;
  ColorDistribution distribution;
};

struct ClusteredDistributions {
  // Always kDistributionsPerClass slots; representatives repeat cyclically
  // when there are fewer clusters.
  std::vector<std::size_t> source_index;
  std::vector<ColorDistribution> distributions;
  std::vector<std::vector<std::size_t>> clusters;
};

ClusteredDistributions cluster_class_palettes(std::span<const PaletteSample> samples, std::size_t n_clusters,
                                              std::uint64_t seed);

}  // namespace ncf
