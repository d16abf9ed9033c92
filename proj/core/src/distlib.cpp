#include "ncf/distlib.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ncf/colorspace.hpp"
#include "ncf/palette.hpp"
#include "ncf/parallel.hpp"

namespace ncf {

namespace {

constexpr double kLWidth = (LabGrid::kLMax - LabGrid::kLMin) / LabGrid::kBinsPerAxis;
constexpr double kABWidth = (LabGrid::kABMax - LabGrid::kABMin) / LabGrid::kBinsPerAxis;

int axis_bin(double v, double lo, double width) {
  const double t = std::floor((v - lo) / width);
  if (!(t >= 0.0)) return 0;  // also catches NaN
  return static_cast<int>(std::min(t, static_cast<double>(LabGrid::kBinsPerAxis - 1)));
}

void require_normalized(double sum, const char* what) {
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::BadWeights, std::string(what) + " weights sum to " + std::to_string(sum));
  }
}

nlohmann::json moments_to_json(const Moments& m) {
  nlohmann::json cov = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) cov.push_back({m.cov(r, 0), m.cov(r, 1), m.cov(r, 2)});
  return {{"mean", {m.mean[0], m.mean[1], m.mean[2]}}, {"cov", std::move(cov)}};
}

Moments moments_from_json(const nlohmann::json& j) {
  Moments m;
  for (int i = 0; i < 3; ++i) m.mean[i] = j.at("mean").at(i).get<double>();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m.cov(r, c) = j.at("cov").at(r).at(c).get<double>();
  }
  return m;
}

}  // namespace

int LabGrid::bin_of(const Vec3& lab) noexcept {
  const int l = axis_bin(lab[0], kLMin, kLWidth);
  const int a = axis_bin(lab[1], kABMin, kABWidth);
  const int b = axis_bin(lab[2], kABMin, kABWidth);
  return (l * kBinsPerAxis + a) * kBinsPerAxis + b;
}

Vec3 LabGrid::center(int bin) noexcept {
  const int b = bin % kBinsPerAxis;
  const int a = (bin / kBinsPerAxis) % kBinsPerAxis;
  const int l = bin / (kBinsPerAxis * kBinsPerAxis);
  return {kLMin + (l + 0.5) * kLWidth, kABMin + (a + 0.5) * kABWidth, kABMin + (b + 0.5) * kABWidth};
}

ColorDistribution ColorDistribution::from_masses(std::span<const double> dense_masses) {
  if (dense_masses.size() != static_cast<std::size_t>(LabGrid::kBinCount)) {
    throw Error(ErrorCode::InvalidArgument, "dense histogram must have one mass per bin");
  }
  double total = 0.0;
  for (double m : dense_masses) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw Error(ErrorCode::BadWeights, "negative or non-finite bin mass");
    total += m;
  }
  if (total <= 0.0) throw Error(ErrorCode::InvalidArgument, "histogram has no mass");
  ColorDistribution d;
  for (std::size_t b = 0; b < dense_masses.size(); ++b) {
    if (dense_masses[b] > 0.0) d.entries_.emplace_back(static_cast<std::uint16_t>(b), dense_masses[b] / total);
  }
  return d;
}

ColorDistribution ColorDistribution::from_entries(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end());
  double total = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first >= LabGrid::kBinCount) throw Error(ErrorCode::Format, "bin index out of range");
    if (i > 0 && entries[i].first == entries[i - 1].first) throw Error(ErrorCode::Format, "duplicate bin index");
    if (!(entries[i].second > 0.0) || !std::isfinite(entries[i].second)) {
      throw Error(ErrorCode::BadWeights, "bin weights must be positive and finite");
    }
    total += entries[i].second;
  }
  if (entries.empty()) throw Error(ErrorCode::InvalidArgument, "distribution has no entries");
  if (std::abs(total - 1.0) > 1e-12) {
    for (auto& e : entries) e.second /= total;
  }
  ColorDistribution d;
  d.entries_ = std::move(entries);
  return d;
}

ColorDistribution ColorDistribution::from_pixels(std::span<const Vec3> lab_pixels) {
  std::vector<double> masses(LabGrid::kBinCount, 0.0);
  for (const auto& p : lab_pixels) masses[static_cast<std::size_t>(LabGrid::bin_of(p))] += 1.0;
  ColorDistribution d = from_masses(masses);
  d.pixel_moments_ = moments_of_points(lab_pixels);
  return d;
}

ColorDistribution ColorDistribution::point_mass(int bin) {
  return from_entries({{static_cast<std::uint16_t>(bin), 1.0}});
}

double ColorDistribution::weight(int bin) const noexcept {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), bin,
                                   [](const Entry& e, int b) { return e.first < b; });
  return it != entries_.end() && it->first == bin ? it->second : 0.0;
}

double ColorDistribution::total() const noexcept {
  double t = 0.0;
  for (const auto& e : entries_) t += e.second;
  return t;
}

ColorDistribution fuse_distributions(std::span<const std::pair<double, const ColorDistribution*>> parts) {
  double wsum = 0.0;
  for (const auto& [w, d] : parts) {
    if (!(w >= 0.0) || d == nullptr) throw Error(ErrorCode::BadWeights, "fusion weights must be non-negative");
    wsum += w;
  }
  if (parts.empty() || std::abs(wsum - 1.0) > 1e-6) {
    throw Error(ErrorCode::BadWeights, "fusion weights sum to " + std::to_string(wsum));
  }
  std::vector<double> masses(LabGrid::kBinCount, 0.0);
  for (const auto& [w, d] : parts) {
    for (const auto& [bin, weight] : d->entries()) masses[bin] += w * weight;
  }
  return ColorDistribution::from_masses(masses);
}

Moments moments_of_distribution(const ColorDistribution& d) {
  if (d.empty()) throw Error(ErrorCode::InvalidArgument, "moments of an empty distribution");
  Vec3 mean = Vec3::Zero();
  for (const auto& [bin, w] : d.entries()) mean += w * LabGrid::center(bin);
  Mat3 cov = Mat3::Zero();
  for (const auto& [bin, w] : d.entries()) {
    const Vec3 c = LabGrid::center(bin) - mean;
    cov.noalias() += w * c * c.transpose();
  }
  cov += Mat3::Identity() * kCovarianceRegularizer;
  return {mean, cov};
}

Moments color_moments(const ColorDistribution& d) {
  return d.pixel_moments() ? *d.pixel_moments() : moments_of_distribution(d);
}

void DistributionLibrary::add_class(int class_id, std::vector<ColorDistribution> distributions, std::string name) {
  if (distributions.size() != kDistributionsPerClass) {
    throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(class_id) + " must have exactly " +
                                                std::to_string(kDistributionsPerClass) + " distributions");
  }
  for (const auto& d : distributions) {
    if (d.empty()) throw Error(ErrorCode::InvalidArgument, "empty distribution in class " + std::to_string(class_id));
    require_normalized(d.total(), "library distribution");
  }
  classes_[class_id] = std::move(distributions);
  names_[class_id] = std::move(name);
}

std::vector<int> DistributionLibrary::class_ids() const {
  std::vector<int> ids;
  ids.reserve(classes_.size());
  for (const auto& [id, _] : classes_) ids.push_back(id);
  return ids;
}

const std::string& DistributionLibrary::name(int class_id) const {
  const auto it = names_.find(class_id);
  if (it == names_.end()) throw Error(ErrorCode::UnknownClass, "class " + std::to_string(class_id));
  return it->second;
}

const std::vector<ColorDistribution>& DistributionLibrary::at(int class_id) const {
  const auto it = classes_.find(class_id);
  if (it == classes_.end()) throw Error(ErrorCode::UnknownClass, "class " + std::to_string(class_id));
  return it->second;
}

nlohmann::json DistributionLibrary::to_json() const {
  nlohmann::json header = {
      {"format", "ncf-color-library"},
      {"version", kFormatVersion},
      {"M", classes_.size()},
      {"bin_grid", {LabGrid::kBinsPerAxis, LabGrid::kBinsPerAxis, LabGrid::kBinsPerAxis}},
      {"lab_box",
       {{"L", {LabGrid::kLMin, LabGrid::kLMax}},
        {"a", {LabGrid::kABMin, LabGrid::kABMax}},
        {"b", {LabGrid::kABMin, LabGrid::kABMax}}}},
  };
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [id, dists] : classes_) {
    nlohmann::json arr = nlohmann::json::array();
    nlohmann::json moments = nlohmann::json::array();
    for (const auto& d : dists) {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& [bin, w] : d.entries()) entries.push_back({bin, w});
      arr.push_back(std::move(entries));
      moments.push_back(d.pixel_moments() ? moments_to_json(*d.pixel_moments()) : nlohmann::json());
    }
    classes.push_back({{"class_id", id},
                       {"name", names_.at(id)},
                       {"distributions", std::move(arr)},
                       {"pixel_moments", std::move(moments)}});
  }
  return {{"header", std::move(header)}, {"classes", std::move(classes)}};
}

DistributionLibrary DistributionLibrary::from_json(const nlohmann::json& j) {
  try {
    const auto& header = j.at("header");
    if (header.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::Format, "unsupported library version " + header.at("version").dump());
    }
    const auto grid = header.at("bin_grid").get<std::vector<int>>();
    if (grid != std::vector<int>(3, LabGrid::kBinsPerAxis)) {
      throw Error(ErrorCode::Format, "unsupported bin grid " + header.at("bin_grid").dump());
    }
    DistributionLibrary lib;
    for (const auto& cls : j.at("classes")) {
      std::vector<ColorDistribution> dists;
      const nlohmann::json moments = cls.value("pixel_moments", nlohmann::json::array());
      for (const auto& entries_json : cls.at("distributions")) {
        std::vector<ColorDistribution::Entry> entries;
        for (const auto& e : entries_json) {
          const int bin = e.at(0).get<int>();
          if (bin < 0 || bin >= LabGrid::kBinCount) throw Error(ErrorCode::Format, "bin index out of range");
          entries.emplace_back(static_cast<std::uint16_t>(bin), e.at(1).get<double>());
        }
        double total = 0.0;
        for (const auto& e : entries) total += e.second;
        require_normalized(total, "serialized distribution");
        ColorDistribution d = ColorDistribution::from_entries(std::move(entries));
        if (dists.size() < moments.size() && !moments[dists.size()].is_null()) {
          d.set_pixel_moments(moments_from_json(moments[dists.size()]));
        }
        dists.push_back(std::move(d));
      }
      lib.add_class(cls.at("class_id").get<int>(), std::move(dists), cls.value("name", std::string{}));
    }
    if (lib.num_classes() != header.at("M").get<std::size_t>()) {
      throw Error(ErrorCode::Format, "header M does not match the number of classes");
    }
    return lib;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Format) throw;
    throw Error(ErrorCode::Format, e.what());
  }
}

std::string DistributionLibrary::serialize() const { return to_json().dump(1) + "\n"; }

void DistributionLibrary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << serialize();
}

DistributionLibrary DistributionLibrary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
  return from_json(j);
}

SampledDistribution sample_distribution(const DistributionLibrary& lib, int class_id, Rng& rng) {
  const auto& dists = lib.at(class_id);
  const std::size_t idx = uniform_index(rng, dists.size());
  return {idx, &dists[idx]};
}

DistributionLibrary build_library(std::span<const LabeledImage> corpus, const LibraryConfig& config,
                                  std::uint64_t seed) {
  std::map<int, std::vector<PaletteSample>> per_class;
  for (std::size_t img_idx = 0; img_idx < corpus.size(); ++img_idx) {
    const auto& item = corpus[img_idx];
    if (!item.mask.matches(item.image)) {
      throw Error(ErrorCode::ShapeMismatch, "mask of corpus image " + std::to_string(img_idx) +
                                                " does not match the image dimensions");
    }
    const LabImage lab = color::rgb_to_lab(item.image);
    std::map<int, std::vector<Vec3>> regions;
    for (std::size_t i = 0; i < lab.size(); ++i) regions[item.mask.labels[i]].push_back(lab.pixels[i]);
    for (const auto& [class_id, pixels] : regions) {
      if (pixels.size() < config.min_region_pixels) continue;
      const auto palette_seed = derive_seed(seed, {img_idx, static_cast<std::uint64_t>(class_id)});
      per_class[class_id].push_back(
          {extract_palette(pixels, config.palette_size, palette_seed), ColorDistribution::from_pixels(pixels)});
    }
  }
  if (per_class.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "no class region with at least " + std::to_string(config.min_region_pixels) +
                                            " pixels");
  }

  std::vector<std::pair<int, std::vector<PaletteSample>>> work(per_class.begin(), per_class.end());
  std::vector<std::vector<ColorDistribution>> results(work.size());
  parallel_for(work.size(), default_jobs(), [&](std::size_t i) {
    const auto cluster_seed = derive_seed(seed, {0xc1a55ULL, static_cast<std::uint64_t>(work[i].first)});
    results[i] = cluster_class_palettes(work[i].second, config.n_clusters, cluster_seed).distributions;
  });

  DistributionLibrary lib;
  for (std::size_t i = 0; i < work.size(); ++i) {
    lib.add_class(work[i].first, std::move(results[i]), "class_" + std::to_string(work[i].first));
  }
  return lib;
}

}  // namespace ncf
