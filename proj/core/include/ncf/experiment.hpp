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

#include "ncf/attack.hpp"

namespace ncf {

// 16 hex digits of FNV-1a over the compact JSON dump.
std::string config_fingerprint(const nlohmann::json& effective_flags);

// Per-image seed, a function of the run seed and the image id only, so the
// processing order never matters.
std::uint64_t image_seed(std::uint64_t run_seed, std::string_view id);

struct AttackItem {
  std::string id;
  RgbImage image;
  SegmentationMask mask;
  int label = 0;
};

struct BatchOptions {
  AttackKind kind = AttackKind::Ncf;
  AttackConfig config;
  std::size_t jobs = 1;
  // Success is judged on the 8-bit image that would be written to disk.
  bool quantize = true;
};

// Attacks every item against `substitute`; results are in input order.
// Success flags cover the substitute and every evaluation oracle. When given,
// `seconds` receives the wall-clock time of each attack.
std::vector<AttackResult> run_attacks(std::span<const AttackItem> items, const ModelOracle& substitute,
                                      const DistributionLibrary& lib, const BatchOptions& options,
                                      std::span<const OraclePtr> eval_oracles = {},
                                      std::vector<double>* seconds = nullptr);

struct ImageSummary {
  std::string id;
  int label = 0;
  std::string image;  // file name of the adversarial PNG, empty if not written
  std::map<std::string, bool> success;
  std::optional<std::size_t> chosen_reset;
  std::optional<double> final_loss;
  double gamut_clip_fraction = 0.0;
};

struct OracleStats {
  std::string name;
  bool white_box = false;
  std::size_t images = 0;
  std::size_t fooled = 0;
  std::optional<std::size_t> clean_errors;

  double success_rate() const { return images == 0 ? 0.0 : static_cast<double>(fooled) / images; }
  std::optional<double> clean_error_rate() const;
};

struct WallClock {
  double total_seconds = 0.0;
  double mean_seconds = 0.0;
  double max_seconds = 0.0;
};

struct ExperimentReport {
  std::string command;
  nlohmann::json config;  // effective flags
  std::string fingerprint;
  std::vector<ImageSummary> images;  // sorted by id
  std::vector<OracleStats> oracles;  // in evaluation order
  WallClock timing;

  const OracleStats& oracle(std::string_view name) const;

  // Deterministic: timing is left out (see timing_json).
  nlohmann::json to_json() const;
  nlohmann::json timing_json() const;
  // One row per oracle: name,white_box,images,fooled,success_rate,clean_error_rate
  std::string to_csv() const;
};

// Builds the report from attack results; clean error rates come from the
// items' original images.
ExperimentReport summarize_attacks(std::span<const AttackItem> items, std::span<const AttackResult> results,
                                   const ModelOracle& substitute, std::span<const OraclePtr> eval_oracles,
                                   const nlohmann::json& effective_flags, std::span<const double> seconds = {});

struct LabeledRgb {
  std::string id;
  RgbImage image;
  int label = 0;
};

// Success rate of each oracle on a fixed image set. On clean images it is the
// clean error rate. `white_box` names the substitute, if any.
ExperimentReport evaluate(std::span<const LabeledRgb> images, std::span<const OraclePtr> oracles,
                          const std::optional<std::string>& white_box, const nlohmann::json& effective_flags,
                          std::size_t jobs = 1);

// Fraction of images an oracle misclassifies.
double error_rate(const ModelOracle& oracle, std::span<const LabeledRgb> images);

}  // namespace ncf
