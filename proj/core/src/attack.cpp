#include "ncf/attack.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "ncf/colorspace.hpp"

namespace ncf {

namespace {

nlohmann::json matrix_json(const Mat3& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) arr.push_back(m(r, c));
  }
  return arr;
}

nlohmann::json vector_json(const Vec3& v) { return {v[0], v[1], v[2]}; }

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double candidate_loss(const ModelOracle& oracle, const Candidate& c, int label) {
  return cw_loss(oracle.logits(c.rgb), label);
}

}  // namespace

ClassWeights class_weights(const SegmentationMask& mask) {
  if (mask.labels.empty()) throw Error(ErrorCode::EmptyMask, "mask has no pixels");
  std::map<int, std::size_t> counts;
  for (int label : mask.labels) ++counts[label];
  ClassWeights out;
  const double total = static_cast<double>(mask.labels.size());
  for (const auto& [id, n] : counts) out.weights[id] = static_cast<double>(n) / total;
  return out;
}

double AttackConfig::step_size() const {
  if (step) return *step;
  return iterations > 0 ? epsilon / iterations : epsilon;
}

void AttackConfig::validate() const {
  if (eta < 1) throw Error(ErrorCode::InvalidArgument, "eta must be at least 1");
  if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be non-negative");
  if (resets < 1) throw Error(ErrorCode::InvalidArgument, "resets must be at least 1");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw Error(ErrorCode::InvalidArgument, "epsilon must be >= 0");
  const double alpha = step_size();
  if (!(alpha >= 0.0) || alpha > epsilon) throw Error(ErrorCode::InvalidArgument, "step must lie in [0, epsilon]");
  if (!(momentum >= 0.0)) throw Error(ErrorCode::InvalidArgument, "momentum must be >= 0");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"eta", eta},         {"iterations", iterations}, {"resets", resets}, {"epsilon", epsilon},
          {"step", step_size()}, {"momentum", momentum},    {"seed", seed}};
}

PreparedImage prepare_image(const RgbImage& x, int label, const SegmentationMask& mask) {
  if (!mask.matches(x)) throw Error(ErrorCode::ShapeMismatch, "mask and image dimensions differ");
  PreparedImage out;
  out.lab = color::rgb_to_lab(x);
  out.moments = image_moments(out.lab);
  out.label = label;
  out.weights = class_weights(mask);
  std::map<int, std::vector<Vec3>> regions;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) regions[mask.labels[i]].push_back(out.lab.pixels[i]);
  for (const auto& [id, pixels] : regions) {
    out.region_distributions.emplace(id, ColorDistribution::from_pixels(pixels));
  }
  return out;
}

namespace {

// The fused histogram is only materialized when fuse is set; the moments do
// not depend on it.
TargetDraw draw_target(const DistributionLibrary& lib, const PreparedImage& img, Rng& rng, bool fuse) {
  std::vector<std::pair<double, const ColorDistribution*>> parts;
  std::vector<std::pair<double, Moments>> part_moments;
  TargetDraw out;
  for (const auto& [id, w] : img.weights.weights) {
    if (lib.contains(id)) {
      const SampledDistribution s = sample_distribution(lib, id, rng);
      parts.emplace_back(w, s.distribution);
      part_moments.emplace_back(w, color_moments(*s.distribution));
      out.indices[id] = static_cast<int>(s.index);
    } else {
      parts.emplace_back(w, &img.region_distributions.at(id));
      part_moments.emplace_back(w, color_moments(img.region_distributions.at(id)));
      out.indices[id] = -1;
    }
  }
  if (fuse) out.distribution = fuse_distributions(parts);
  out.moments = mix_moments(part_moments);
  return out;
}

}  // namespace

TargetDraw build_target(const DistributionLibrary& lib, const PreparedImage& img, Rng& rng) {
  return draw_target(lib, img, rng, true);
}

Candidate map_colors(const PreparedImage& img, const TransferMatrix& t, const Vec3& target_mean) {
  Candidate c;
  c.lab = apply_transfer(img.lab, t, img.moments.mean, target_mean);
  auto converted = color::lab_to_rgb(c.lab);
  c.rgb = std::move(converted.rgb);
  c.clipped_channels = converted.clipped_channels;
  return c;
}

SearchResult random_search(const PreparedImage& img, const ModelOracle& oracle, const DistributionLibrary& lib, int eta,
                           std::uint64_t stream_seed) {
  if (eta < 1) throw Error(ErrorCode::InvalidArgument, "eta must be at least 1");
  SearchResult best;
  best.loss = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < eta; ++j) {
    Rng rng(derive_seed(stream_seed, {static_cast<std::uint64_t>(j)}));
    TargetDraw target = draw_target(lib, img, rng, false);
    const TransferMatrix t = mk_transfer(img.moments, target.moments);
    const double loss = candidate_loss(oracle, map_colors(img, t, target.moments.mean), img.label);
    if (j == 0 || loss > best.loss) {
      best.target = std::move(target);
      best.transfer = t;
      best.loss = loss;
      best.candidate = static_cast<std::size_t>(j);
    }
  }
  Rng rng(derive_seed(stream_seed, {static_cast<std::uint64_t>(best.candidate)}));
  best.target = build_target(lib, img, rng);
  return best;
}

TransferGradient transfer_gradient(const PreparedImage& img, const ModelOracle& oracle, const TransferMatrix& t_prime,
                                   const Vec3& target_mean) {
  const LabImage mapped = apply_transfer(img.lab, t_prime, img.moments.mean, target_mean);
  RgbImage rgb(mapped.width, mapped.height);
  std::vector<Mat3> jacobians(mapped.size());
  for (std::size_t p = 0; p < mapped.size(); ++p) {
    rgb.pixels[p] = color::lab_to_rgb_with_jacobian(mapped.pixels[p], jacobians[p]);
  }
  const LossGradient lg = oracle.loss_and_input_gradient(rgb, img.label);
  TransferGradient out;
  out.loss = lg.loss;
  for (std::size_t p = 0; p < mapped.size(); ++p) {
    const Vec3 u = jacobians[p].transpose() * lg.grad[p];
    out.grad.noalias() += u * (img.lab.pixels[p] - img.moments.mean).transpose();
  }
  return out;
}

Mat3 clamp_to_ball(const Mat3& value, const Mat3& center, double radius) {
  Mat3 out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double ctr = center(r, c);
      double v = std::clamp(value(r, c), ctr - radius, ctr + radius);
      while (std::abs(v - ctr) > radius) v = std::nextafter(v, ctr);
      out(r, c) = v;
    }
  }
  return out;
}

namespace {

// Snaps the step onto a grid coarse enough that any sum of `iterations` signed
// steps is exact. With the default step, N steps then never pass epsilon.
double grid_step(const AttackConfig& config) {
  const double alpha = config.step_size();
  if (alpha <= 0.0 || config.iterations <= 0) return alpha;
  int exponent = 0;
  std::frexp(alpha, &exponent);
  const int spare = std::bit_width(static_cast<unsigned>(config.iterations)) + 1;
  const double quantum = std::ldexp(1.0, exponent - 53 + spare);
  double snapped = std::floor(alpha / quantum) * quantum;
  if (!config.step)
    while (snapped > 0.0 && config.iterations * snapped > config.epsilon) snapped -= quantum;
  return snapped;
}

}  // namespace

NeighborhoodResult neighborhood_search(const PreparedImage& img, const ModelOracle& oracle, const TransferMatrix& t,
                                       const Vec3& target_mean, const AttackConfig& config) {
  config.validate();
  const double alpha = grid_step(config);
  const double eps = config.epsilon;
  NeighborhoodResult out;
  Mat3 offset = Mat3::Zero();  // T' - T
  Mat3 current = t.m;
  Mat3 momentum = Mat3::Zero();
  for (int n = 1; n <= config.iterations; ++n) {
    const TransferGradient g = transfer_gradient(img, oracle, {current}, target_mean);
    const double l1 = g.grad.cwiseAbs().sum();
    momentum = config.momentum * momentum;
    if (l1 > 0.0 && std::isfinite(l1)) momentum += g.grad / l1;
    const Mat3 stepped = offset + alpha * momentum.unaryExpr([](double v) { return sign(v); });
    out.max_unclamped_deviation = std::max(out.max_unclamped_deviation, stepped.cwiseAbs().maxCoeff());
    offset = stepped.cwiseMax(-eps).cwiseMin(eps);
    current = clamp_to_ball(t.m + offset, t.m, eps);
  }
  out.transfer = {current};
  out.loss = candidate_loss(oracle, map_colors(img, out.transfer, target_mean), img.label);
  return out;
}

namespace {

void fill_success(AttackResult& result, int label, const ModelOracle& substitute,
                  std::span<const OraclePtr> eval_oracles) {
  result.success[substitute.name()] = substitute.logits(result.adversarial).argmax() != label;
  for (const auto& o : eval_oracles) result.success[o->name()] = o->logits(result.adversarial).argmax() != label;
}

void check_inputs(const RgbImage& x, int label, const SegmentationMask& mask, const ModelOracle& oracle) {
  if (!mask.matches(x)) throw Error(ErrorCode::ShapeMismatch, "mask and image dimensions differ");
  if (x.width != oracle.input_width() || x.height != oracle.input_height()) {
    throw Error(ErrorCode::ShapeMismatch, "image does not match the oracle input resolution");
  }
  if (label < 0 || static_cast<std::size_t>(label) >= oracle.num_classes()) {
    throw Error(ErrorCode::InvalidArgument, "label out of range for the oracle");
  }
}

}  // namespace

AttackResult ncf_attack(const RgbImage& x, int label, const SegmentationMask& mask, const ModelOracle& oracle,
                        const DistributionLibrary& lib, const AttackConfig& config,
                        std::span<const OraclePtr> eval_oracles) {
  config.validate();
  check_inputs(x, label, mask, oracle);
  const PreparedImage img = prepare_image(x, label, mask);

  AttackResult result;
  result.variant = "ncf";
  double best_loss = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < config.resets; ++i) {
    const std::uint64_t stream = derive_seed(config.seed, {static_cast<std::uint64_t>(i)});
    SearchResult search = random_search(img, oracle, lib, config.eta, stream);
    const NeighborhoodResult ns =
        neighborhood_search(img, oracle, search.transfer, search.target.moments.mean, config);

    ResetRecord rec;
    rec.indices = search.target.indices;
    rec.target = std::move(search.target.distribution);
    rec.target_moments = search.target.moments;
    rec.transfer = search.transfer;
    rec.perturbed = ns.transfer;
    rec.search_loss = search.loss;
    rec.final_loss = ns.loss;
    rec.max_unclamped_deviation = ns.max_unclamped_deviation;
    if (i == 0 || ns.loss > best_loss) {
      best_loss = ns.loss;
      result.chosen_reset = static_cast<std::size_t>(i);
    }
    result.resets.push_back(std::move(rec));
  }

  const ResetRecord& win = result.resets[result.chosen_reset];
  Candidate final_candidate = map_colors(img, win.perturbed, win.target_moments.mean);
  result.gamut_clip_fraction = static_cast<double>(final_candidate.clipped_channels) / (3.0 * x.size());
  result.adversarial = std::move(final_candidate.rgb);
  fill_success(result, label, oracle, eval_oracles);
  return result;
}

std::string_view to_string(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::Ncf: return "ncf";
    case AttackKind::NcfNoNeighborhood: return "ncf-ns";
    case AttackKind::NcfNoReset: return "ncf-ir";
    case AttackKind::NcfNoResetNoNeighborhood: return "ncf-ir-ns";
    case AttackKind::RandomColor: return "random-color";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view name) {
  for (auto k : {AttackKind::Ncf, AttackKind::NcfNoNeighborhood, AttackKind::NcfNoReset,
                 AttackKind::NcfNoResetNoNeighborhood, AttackKind::RandomColor}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown attack variant '" + std::string(name) + "'");
}

AttackConfig variant_config(AttackKind kind, AttackConfig config) {
  if (kind == AttackKind::NcfNoNeighborhood || kind == AttackKind::NcfNoResetNoNeighborhood) config.iterations = 0;
  if (kind == AttackKind::NcfNoReset || kind == AttackKind::NcfNoResetNoNeighborhood) config.resets = 1;
  if (kind == AttackKind::RandomColor) {
    config.eta = 1;
    config.iterations = 0;
    config.resets = 1;
  }
  if (config.iterations == 0 && !config.step) config.step = 0.0;
  return config;
}

AttackResult attack_variant(AttackKind kind, const RgbImage& x, int label, const SegmentationMask& mask,
                            const ModelOracle& oracle, const DistributionLibrary& lib, const AttackConfig& config,
                            std::span<const OraclePtr> eval_oracles) {
  const AttackConfig effective = variant_config(kind, config);
  if (kind != AttackKind::RandomColor) {
    AttackResult r = ncf_attack(x, label, mask, oracle, lib, effective, eval_oracles);
    r.variant = std::string(to_string(kind));
    return r;
  }

  effective.validate();
  check_inputs(x, label, mask, oracle);
  const PreparedImage img = prepare_image(x, label, mask);
  // Same stream as the first candidate of the first reset.
  Rng rng(derive_seed(derive_seed(effective.seed, {0}), {0}));
  TargetDraw target = build_target(lib, img, rng);
  const TransferMatrix t = mk_transfer(img.moments, target.moments);
  Candidate c = map_colors(img, t, target.moments.mean);

  AttackResult result;
  result.variant = std::string(to_string(kind));
  ResetRecord rec;
  rec.indices = target.indices;
  rec.target = std::move(target.distribution);
  rec.target_moments = target.moments;
  rec.transfer = t;
  rec.perturbed = t;
  result.resets.push_back(std::move(rec));
  result.gamut_clip_fraction = static_cast<double>(c.clipped_channels) / (3.0 * x.size());
  result.adversarial = std::move(c.rgb);
  fill_success(result, label, oracle, eval_oracles);
  return result;
}

nlohmann::json AttackResult::to_json(const AttackConfig& config) const {
  nlohmann::json resets_json = nlohmann::json::array();
  for (const auto& r : resets) {
    nlohmann::json indices = nlohmann::json::object();
    for (const auto& [id, idx] : r.indices) indices[std::to_string(id)] = idx;
    nlohmann::json target = nlohmann::json::array();
    for (const auto& [bin, w] : r.target.entries()) target.push_back({bin, w});
    resets_json.push_back({
        {"indices", std::move(indices)},
        {"target", std::move(target)},
        {"target_mean", vector_json(r.target_moments.mean)},
        {"target_cov", matrix_json(r.target_moments.cov)},
        {"T", matrix_json(r.transfer.m)},
        {"T_prime", matrix_json(r.perturbed.m)},
        {"search_loss", optional_json(r.search_loss)},
        {"final_loss", optional_json(r.final_loss)},
        {"max_unclamped_deviation", r.max_unclamped_deviation},
    });
  }
  nlohmann::json success_json = nlohmann::json::object();
  for (const auto& [name, ok] : success) success_json[name] = ok;
  return {{"variant", variant},
          {"config", config.to_json()},
          {"chosen_reset", chosen_reset},
          {"gamut_clip_fraction", gamut_clip_fraction},
          {"success", std::move(success_json)},
          {"resets", std::move(resets_json)}};
}

}  // namespace ncf
