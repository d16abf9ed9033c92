#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncf/distlib.hpp"
#include "ncf/image.hpp"
#include "ncf/oracle.hpp"
#include "ncf/transport.hpp"

namespace ncf {

// Pixel fraction of every class id present in a mask; sums to one.
struct ClassWeights {
  std::map<int, double> weights;
};

ClassWeights class_weights(const SegmentationMask& mask);

struct AttackConfig {
  int eta = 50;          // random-search width
  int iterations = 15;   // neighborhood-search steps N
  int resets = 10;       // initialization resets K
  double epsilon = 0.2;  // L-infinity radius around the MK transfer matrix
  std::optional<double> step;  // defaults to epsilon / iterations
  double momentum = 0.6;
  std::uint64_t seed = 0;

  double step_size() const;
  // Throws InvalidArgument.
  void validate() const;
  nlohmann::json to_json() const;
};

// Everything about the clean image the search loops reuse.
struct PreparedImage {
  LabImage lab;
  Moments moments;
  int label = 0;
  ClassWeights weights;
  // Histogram (with exact pixel moments) of each class region, used for
  // classes the library does not cover.
  std::map<int, ColorDistribution> region_distributions;
};

PreparedImage prepare_image(const RgbImage& x, int label, const SegmentationMask& mask);

struct TargetDraw {
  ColorDistribution distribution;  // fused H
  Moments moments;                 // moments of H
  std::map<int, int> indices;      // library slot per class, -1 when the region's own colors were used
};

// Samples one library distribution per class and fuses them by pixel weight.
// Classes missing from the library contribute their own region distribution.
TargetDraw build_target(const DistributionLibrary& lib, const PreparedImage& img, Rng& rng);

struct Candidate {
  LabImage lab;
  RgbImage rgb;
  std::size_t clipped_channels = 0;
};

Candidate map_colors(const PreparedImage& img, const TransferMatrix& t, const Vec3& target_mean);

struct SearchResult {
  TargetDraw target;
  TransferMatrix transfer;
  double loss = 0.0;
  std::size_t candidate = 0;
};

// Candidate j draws from its own stream derive_seed(stream_seed, {j}), so a
// wider search evaluates a superset of a narrower one.
SearchResult random_search(const PreparedImage& img, const ModelOracle& oracle, const DistributionLibrary& lib, int eta,
                           std::uint64_t stream_seed);

struct TransferGradient {
  double loss = 0.0;
  Mat3 grad = Mat3::Zero();
};

// C&W loss of lab_to_rgb(T'(x - mu_x) + mu*) and its gradient with respect to T'.
TransferGradient transfer_gradient(const PreparedImage& img, const ModelOracle& oracle, const TransferMatrix& t_prime,
                                   const Vec3& target_mean);

struct NeighborhoodResult {
  TransferMatrix transfer;
  double loss = 0.0;
  double max_unclamped_deviation = 0.0;  // largest entry of the step offset T'_n - T before clamping
};

// Momentum sign ascent on T' inside the entry-wise ball |T' - T| <= epsilon.
NeighborhoodResult neighborhood_search(const PreparedImage& img, const ModelOracle& oracle, const TransferMatrix& t,
                                       const Vec3& target_mean, const AttackConfig& config);

struct ResetRecord {
  std::map<int, int> indices;
  ColorDistribution target;
  Moments target_moments;
  TransferMatrix transfer;
  TransferMatrix perturbed;
  std::optional<double> search_loss;
  std::optional<double> final_loss;
  double max_unclamped_deviation = 0.0;
};

struct AttackResult {
  RgbImage adversarial;
  std::size_t chosen_reset = 0;
  std::vector<ResetRecord> resets;
  std::map<std::string, bool> success;  // oracle name -> misclassified
  double gamut_clip_fraction = 0.0;
  std::string variant;

  nlohmann::json to_json(const AttackConfig& config) const;
};

AttackResult ncf_attack(const RgbImage& x, int label, const SegmentationMask& mask, const ModelOracle& oracle,
                        const DistributionLibrary& lib, const AttackConfig& config,
                        std::span<const OraclePtr> eval_oracles = {});

enum class AttackKind { Ncf, NcfNoNeighborhood, NcfNoReset, NcfNoResetNoNeighborhood, RandomColor };

std::string_view to_string(AttackKind kind) noexcept;
// Accepts ncf, ncf-ns, ncf-ir, ncf-ir-ns, random-color. Throws InvalidArgument.
AttackKind parse_attack_kind(std::string_view name);

// Applies the ablation's overrides to a config.
AttackConfig variant_config(AttackKind kind, AttackConfig config);

AttackResult attack_variant(AttackKind kind, const RgbImage& x, int label, const SegmentationMask& mask,
                            const ModelOracle& oracle, const DistributionLibrary& lib, const AttackConfig& config,
                            std::span<const OraclePtr> eval_oracles = {});

// Entry-wise clamp into [center - radius, center + radius] that also holds
// when the deviation is recomputed in floating point.
Mat3 clamp_to_ball(const Mat3& value, const Mat3& center, double radius);

}  // namespace ncf
