#include "ncf/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "ncf/error.hpp"
#include "ncf/image_io.hpp"
#include "ncf/parallel.hpp"

namespace ncf {

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string config_fingerprint(const nlohmann::json& effective_flags) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(effective_flags.dump())));
  return buf;
}

std::uint64_t image_seed(std::uint64_t run_seed, std::string_view id) { return derive_seed(run_seed, {fnv1a(id)}); }

std::vector<AttackResult> run_attacks(std::span<const AttackItem> items, const ModelOracle& substitute,
                                      const DistributionLibrary& lib, const BatchOptions& options,
                                      std::span<const OraclePtr> eval_oracles, std::vector<double>* seconds) {
  options.config.validate();
  std::vector<AttackResult> results(items.size());
  std::vector<double> elapsed(items.size(), 0.0);
  parallel_for(items.size(), options.jobs, [&](std::size_t i) {
    const AttackItem& item = items[i];
    AttackConfig config = options.config;
    config.seed = image_seed(options.config.seed, item.id);
    const auto start = std::chrono::steady_clock::now();
    AttackResult r;
    try {
      r = attack_variant(options.kind, item.image, item.label, item.mask, substitute, lib, config, eval_oracles);
    } catch (const Error& e) {
      throw Error(e.code(), item.id + ": " + e.what());
    }
    if (options.quantize) {
      r.adversarial = io::quantize8(r.adversarial);
      r.success[substitute.name()] = substitute.logits(r.adversarial).argmax() != item.label;
      for (const auto& o : eval_oracles) r.success[o->name()] = o->logits(r.adversarial).argmax() != item.label;
    }
    results[i] = std::move(r);
    elapsed[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  if (seconds != nullptr) *seconds = std::move(elapsed);
  return results;
}

std::optional<double> OracleStats::clean_error_rate() const {
  if (!clean_errors || images == 0) return std::nullopt;
  return static_cast<double>(*clean_errors) / images;
}

const OracleStats& ExperimentReport::oracle(std::string_view name) const {
  for (const auto& o : oracles) {
    if (o.name == name) return o;
  }
  throw Error(ErrorCode::InvalidArgument, "no oracle named " + std::string(name) + " in the report");
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json oracles_json = nlohmann::json::array();
  for (const auto& o : oracles) {
    oracles_json.push_back({{"name", o.name},
                            {"white_box", o.white_box},
                            {"images", o.images},
                            {"fooled", o.fooled},
                            {"success_rate", o.success_rate()},
                            {"clean_error_rate", optional_json(o.clean_error_rate())}});
  }
  nlohmann::json images_json = nlohmann::json::array();
  for (const auto& img : images) {
    nlohmann::json success = nlohmann::json::object();
    for (const auto& [name, ok] : img.success) success[name] = ok;
    nlohmann::json entry = {{"id", img.id}, {"label", img.label}, {"success", std::move(success)}};
    if (!img.image.empty()) entry["image"] = img.image;
    if (img.chosen_reset) entry["chosen_reset"] = *img.chosen_reset;
    if (img.final_loss) entry["final_loss"] = *img.final_loss;
    if (img.chosen_reset) entry["gamut_clip_fraction"] = img.gamut_clip_fraction;
    images_json.push_back(std::move(entry));
  }
  return {{"command", command},
          {"config", config},
          {"fingerprint", fingerprint},
          {"oracles", std::move(oracles_json)},
          {"images", std::move(images_json)}};
}

nlohmann::json ExperimentReport::timing_json() const {
  return {{"fingerprint", fingerprint},
          {"images", images.size()},
          {"total_seconds", timing.total_seconds},
          {"mean_seconds_per_image", timing.mean_seconds},
          {"max_seconds_per_image", timing.max_seconds}};
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out << "oracle,white_box,images,fooled,success_rate,clean_error_rate\n";
  for (const auto& o : oracles) {
    const auto clean = o.clean_error_rate();
    out << o.name << ',' << (o.white_box ? 1 : 0) << ',' << o.images << ',' << o.fooled << ','
        << format_rate(o.success_rate()) << ',' << (clean ? format_rate(*clean) : std::string()) << '\n';
  }
  return out.str();
}

ExperimentReport summarize_attacks(std::span<const AttackItem> items, std::span<const AttackResult> results,
                                   const ModelOracle& substitute, std::span<const OraclePtr> eval_oracles,
                                   const nlohmann::json& effective_flags, std::span<const double> seconds) {
  if (items.size() != results.size()) throw Error(ErrorCode::InvalidArgument, "one result per item is required");
  ExperimentReport report;
  report.command = "attack";
  report.config = effective_flags;
  report.fingerprint = config_fingerprint(effective_flags);

  std::vector<std::string> names{substitute.name()};
  for (const auto& o : eval_oracles) {
    if (std::find(names.begin(), names.end(), o->name()) == names.end()) names.push_back(o->name());
  }
  for (const auto& name : names) {
    OracleStats s;
    s.name = name;
    s.white_box = name == substitute.name();
    s.images = items.size();
    s.clean_errors = 0;
    report.oracles.push_back(s);
  }

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });
  for (std::size_t i : order) {
    const AttackResult& r = results[i];
    ImageSummary s;
    s.id = items[i].id;
    s.label = items[i].label;
    s.success = r.success;
    if (!r.resets.empty()) {
      s.chosen_reset = r.chosen_reset;
      s.final_loss = r.resets[r.chosen_reset].final_loss;
    }
    s.gamut_clip_fraction = r.gamut_clip_fraction;
    report.images.push_back(std::move(s));
  }

  for (auto& stats : report.oracles) {
    const ModelOracle* oracle = &substitute;
    for (const auto& o : eval_oracles) {
      if (o->name() == stats.name && stats.name != substitute.name()) oracle = o.get();
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto it = results[i].success.find(stats.name);
      if (it != results[i].success.end() && it->second) ++stats.fooled;
      if (oracle->logits(items[i].image).argmax() != items[i].label) ++*stats.clean_errors;
    }
  }
  if (!seconds.empty()) {
    report.timing.total_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0);
    report.timing.mean_seconds = report.timing.total_seconds / static_cast<double>(seconds.size());
    report.timing.max_seconds = *std::max_element(seconds.begin(), seconds.end());
  }
  return report;
}

double error_rate(const ModelOracle& oracle, std::span<const LabeledRgb> images) {
  if (images.empty()) return 0.0;
  std::size_t wrong = 0;
  for (const auto& img : images) wrong += oracle.logits(img.image).argmax() != img.label ? 1 : 0;
  return static_cast<double>(wrong) / images.size();
}

ExperimentReport evaluate(std::span<const LabeledRgb> images, std::span<const OraclePtr> oracles,
                          const std::optional<std::string>& white_box, const nlohmann::json& effective_flags,
                          std::size_t jobs) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.command = "eval";
  report.config = effective_flags;
  report.fingerprint = config_fingerprint(effective_flags);

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return images[a].id < images[b].id; });

  // fooled[i][k]: oracle k misclassifies image order[i]
  std::vector<std::vector<char>> fooled(images.size(), std::vector<char>(oracles.size(), 0));
  parallel_for(images.size(), jobs, [&](std::size_t i) {
    const LabeledRgb& img = images[order[i]];
    for (std::size_t k = 0; k < oracles.size(); ++k) {
      try {
        fooled[i][k] = oracles[k]->logits(img.image).argmax() != img.label ? 1 : 0;
      } catch (const Error& e) {
        throw Error(e.code(), img.id + ": " + e.what());
      }
    }
  });

  for (std::size_t k = 0; k < oracles.size(); ++k) {
    OracleStats s;
    s.name = oracles[k]->name();
    s.white_box = white_box && *white_box == s.name;
    s.images = images.size();
    for (std::size_t i = 0; i < images.size(); ++i) s.fooled += fooled[i][k];
    report.oracles.push_back(s);
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const LabeledRgb& img = images[order[i]];
    ImageSummary s;
    s.id = img.id;
    s.label = img.label;
    for (std::size_t k = 0; k < oracles.size(); ++k) s.success[oracles[k]->name()] = fooled[i][k] != 0;
    report.images.push_back(std::move(s));
  }
  report.timing.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!images.empty()) report.timing.mean_seconds = report.timing.total_seconds / images.size();
  report.timing.max_seconds = report.timing.mean_seconds;
  return report;
}

}  // namespace ncf
