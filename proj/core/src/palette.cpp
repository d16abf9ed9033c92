#include "ncf/palette.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <tuple>

namespace ncf {

namespace {

constexpr int kMaxLloydIterations = 50;
constexpr double kCentroidShiftTolerance = 1e-4;

bool lex_less(const Vec3& a, const Vec3& b) {
  return std::tie(a[0], a[1], a[2]) < std::tie(b[0], b[1], b[2]);
}

std::size_t count_distinct(std::span<const Vec3> pixels) {
  std::vector<Vec3> sorted(pixels.begin(), pixels.end());
  std::sort(sorted.begin(), sorted.end(), lex_less);
  return static_cast<std::size_t>(std::distance(sorted.begin(), std::unique(sorted.begin(), sorted.end())));
}

std::size_t nearest(const std::vector<Vec3>& centroids, const Vec3& p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    const double d = (centroids[k] - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

std::vector<Vec3> kmeans_plus_plus(std::span<const Vec3> pixels, std::size_t k, Rng& rng) {
  std::vector<Vec3> centroids;
  centroids.reserve(k);
  centroids.push_back(pixels[uniform_index(rng, pixels.size())]);
  std::vector<double> d2(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) d2[i] = (pixels[i] - centroids[0]).squaredNorm();
  while (centroids.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (total <= 0.0) break;
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    std::size_t pick = pixels.size() - 1;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    // Guard against rounding in the cumulative sum landing on a zero-mass tail.
    while (d2[pick] <= 0.0 && pick > 0) --pick;
    centroids.push_back(pixels[pick]);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      d2[i] = std::min(d2[i], (pixels[i] - centroids.back()).squaredNorm());
    }
  }
  return centroids;
}

}  // namespace

Palette extract_palette(std::span<const Vec3> region_pixels, int palette_size, std::uint64_t seed) {
  if (region_pixels.empty() || palette_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "palette extraction needs pixels and a positive size");
  }
  const std::size_t k = std::min(static_cast<std::size_t>(palette_size), count_distinct(region_pixels));
  Rng rng(seed);
  std::vector<Vec3> centroids = kmeans_plus_plus(region_pixels, k, rng);

  std::vector<std::size_t> assignment(region_pixels.size());
  std::vector<std::size_t> counts(centroids.size());
  for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
    std::vector<Vec3> sums(centroids.size(), Vec3::Zero());
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < region_pixels.size(); ++i) {
      assignment[i] = nearest(centroids, region_pixels[i]);
      sums[assignment[i]] += region_pixels[i];
      ++counts[assignment[i]];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (counts[c] == 0) continue;
      const Vec3 updated = sums[c] / static_cast<double>(counts[c]);
      shift = std::max(shift, (updated - centroids[c]).norm());
      centroids[c] = updated;
    }
    if (shift < kCentroidShiftTolerance) break;
  }
  std::fill(counts.begin(), counts.end(), 0);
  for (const auto& p : region_pixels) ++counts[nearest(centroids, p)];

  Palette palette;
  const double n = static_cast<double>(region_pixels.size());
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] == 0) continue;
    palette.colors.push_back(centroids[c]);
    palette.proportions.push_back(static_cast<double>(counts[c]) / n);
  }
  return palette;
}

double palette_distance(const Palette& p, const Palette& q) {
  if (p.size() == 0 || q.size() == 0) {
    throw Error(ErrorCode::InvalidArgument, "palette distance of an empty palette");
  }
  struct Pair {
    double d;
    std::size_t i;
    std::size_t j;
  };
  std::vector<Pair> pairs;
  pairs.reserve(p.size() * q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      pairs.push_back({(p.colors[i] - q.colors[j]).norm(), i, j});
    }
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const Pair& a, const Pair& b) { return std::tie(a.d, a.i, a.j) < std::tie(b.d, b.i, b.j); });

  std::vector<bool> used_p(p.size(), false);
  std::vector<bool> used_q(q.size(), false);
  double cost = 0.0;
  std::size_t matched = 0;
  const std::size_t target = std::min(p.size(), q.size());
  for (const auto& pr : pairs) {
    if (matched == target) break;
    if (used_p[pr.i] || used_q[pr.j]) continue;
    used_p[pr.i] = used_q[pr.j] = true;
    cost += pr.d * 0.5 * (p.proportions[pr.i] + q.proportions[pr.j]);
    ++matched;
  }
  auto leftovers = [](const Palette& a, const std::vector<bool>& used, const Palette& other) {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (used[i]) continue;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& o : other.colors) best = std::min(best, (a.colors[i] - o).norm());
      c += 0.5 * a.proportions[i] * best;
    }
    return c;
  };
  return cost + leftovers(p, used_p, q) + leftovers(q, used_q, p);
}

std::vector<std::vector<std::size_t>> average_linkage(const Eigen::MatrixXd& distances, std::size_t n_clusters) {
  const auto n = static_cast<std::size_t>(distances.rows());
  if (distances.cols() != distances.rows()) {
    throw Error(ErrorCode::InvalidArgument, "distance matrix must be square");
  }
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  std::vector<bool> active(n, true);
  Eigen::MatrixXd d = distances;
  std::size_t live = n;
  const std::size_t target = std::max<std::size_t>(1, std::min(n_clusters, n));

  while (live > target) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0;
    std::size_t bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (active[j] && d(i, j) < best) {
          best = d(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    const double ni = static_cast<double>(members[bi].size());
    const double nj = static_cast<double>(members[bj].size());
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double merged = (ni * d(bi, k) + nj * d(bj, k)) / (ni + nj);
      d(bi, k) = d(k, bi) = merged;
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    std::sort(members[bi].begin(), members[bi].end());
    members[bj].clear();
    active[bj] = false;
    --live;
  }

  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (active[i]) out.push_back(std::move(members[i]));
  }
  return out;
}

ClusteredDistributions cluster_class_palettes(std::span<const PaletteSample> samples, std::size_t n_clusters,
                                              std::uint64_t seed) {
  if (samples.empty()) {
    throw Error(ErrorCode::InvalidArgument, "no palettes to cluster");
  }
  const std::size_t n = samples.size();
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dij =
          0.5 * (palette_distance(samples[i].palette, samples[j].palette) +
                 palette_distance(samples[j].palette, samples[i].palette));
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dij;
      dist(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = dij;
    }
  }

  ClusteredDistributions out;
  out.clusters = average_linkage(dist, std::min(n_clusters, kDistributionsPerClass));

  Rng rng(seed);
  std::vector<std::size_t> representatives;
  representatives.reserve(out.clusters.size());
  for (const auto& cluster : out.clusters) {
    representatives.push_back(cluster[uniform_index(rng, cluster.size())]);
  }
  for (std::size_t slot = 0; slot < kDistributionsPerClass; ++slot) {
    const std::size_t src = representatives[slot % representatives.size()];
    out.source_index.push_back(src);
    out.distributions.push_back(samples[src].distribution);
  }
  return out;
}

}  // namespace ncf
