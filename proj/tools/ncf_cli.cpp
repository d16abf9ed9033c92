// ncf: dataset synthesis, toy-model training, library building, attacking
// and cross-model evaluation.
//
// Exit codes: 0 success, 2 usage, 3 data, 4 model/shape.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncf/attack.hpp"
#include "ncf/dataset.hpp"
#include "ncf/distlib.hpp"
#include "ncf/error.hpp"
#include "ncf/experiment.hpp"
#include "ncf/image_io.hpp"
#include "ncf/parallel.hpp"
#include "ncf/toy_classifier.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitModel = 4;

// Raised by the command bodies to choose an exit code explicitly.
struct ExitError {
  int code;
  std::string message;
};

int exit_code_for(ncf::ErrorCode code) {
  switch (code) {
    case ncf::ErrorCode::InvalidArgument:
      return kExitUsage;
    case ncf::ErrorCode::ShapeMismatch:
    case ncf::ErrorCode::ClassCountMismatch:
    case ncf::ErrorCode::NoGradientSupport:
      return kExitModel;
    default:
      return kExitData;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ncf::Error(ncf::ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// --seed wins, then NCF_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("NCF_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ExitError{kExitUsage, "NCF_SEED is not an unsigned integer: " + std::string(env)};
  }
  return 0;
}

std::vector<ncf::OraclePtr> load_models(const std::string& list) {
  std::vector<ncf::OraclePtr> models;
  for (const auto& path : split_list(list)) {
    try {
      models.push_back(std::make_shared<ncf::ToyClassifier>(ncf::ToyClassifier::load(path)));
    } catch (const ncf::Error& e) {
      throw ExitError{kExitModel, e.what()};
    }
  }
  if (models.empty()) throw ExitError{kExitUsage, "no model given"};
  return models;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ncf::Error(ncf::ErrorCode::Io, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".png" || ext == ".ppm")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path find_mask(const fs::path& masks, const std::string& stem) {
  for (const char* ext : {".pgm", ".png"}) {
    const fs::path p = masks / (stem + ext);
    if (fs::exists(p)) return p;
  }
  throw ncf::Error(ncf::ErrorCode::Io, "no mask for " + stem + " in " + masks.string());
}

struct Pair {
  std::string id;
  ncf::RgbImage image;
  ncf::SegmentationMask mask;
};

// Images sorted by file name with their masks. A mask that does not match
// its image raises ShapeMismatch naming the mask file.
std::vector<Pair> read_pairs(const fs::path& images, const fs::path& masks) {
  std::vector<Pair> out;
  for (const auto& path : list_images(images)) {
    Pair p;
    p.id = path.stem().string();
    p.image = ncf::io::read_image(path);
    const fs::path mask_path = find_mask(masks, p.id);
    p.mask = ncf::io::read_mask(mask_path);
    if (!p.mask.matches(p.image)) {
      throw ncf::Error(ncf::ErrorCode::ShapeMismatch,
                       mask_path.string() + " does not match the dimensions of " + path.string());
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::map<std::string, int> label_map(const fs::path& csv) {
  std::map<std::string, int> out;
  for (const auto& row : ncf::read_labels(csv)) out[row.id] = row.label;
  return out;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  int classes = 3;
  int per_class = 100;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  ncf::SyntheticConfig config;
  config.classes = a.classes;
  config.per_class = a.per_class;
  config.seed = resolve_seed(a.seed);
  const auto samples = ncf::make_synthetic(config);
  ncf::write_dataset(a.out, samples);
  std::cout << "wrote " << samples.size() << " samples to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out;
  int epochs = 30;
  std::optional<int> classes;
  double lr = 0.01;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  const auto dataset = ncf::read_dataset(a.data);
  if (dataset.empty()) throw ncf::Error(ncf::ErrorCode::EmptyCorpus, a.data + " has no samples");
  int max_label = 0;
  for (const auto& s : dataset) max_label = std::max(max_label, s.label);
  const int classes = a.classes.value_or(max_label + 1);
  if (max_label >= classes) throw ExitError{kExitData, "labels exceed --classes"};

  std::vector<ncf::TrainingSample> samples;
  samples.reserve(dataset.size());
  for (const auto& s : dataset) samples.push_back({s.image, s.label});
  ncf::TrainingConfig config;
  config.seed = resolve_seed(a.seed);
  config.epochs = a.epochs;
  config.learning_rate = a.lr;
  const fs::path out(a.out);
  const auto model = ncf::train_toy(samples, static_cast<std::size_t>(classes), config, out.stem().string());
  model.save(out);

  const json meta = {{"checkpoint", out.filename().string()},
                     {"architecture", ncf::ToyClassifier::kArchitectureId},
                     {"classes", classes},
                     {"samples", samples.size()},
                     {"seed", config.seed},
                     {"epochs", config.epochs},
                     {"learning_rate", config.learning_rate},
                     {"momentum", config.momentum},
                     {"batch_size", config.batch_size},
                     {"train_accuracy", model.training_meta().train_accuracy}};
  write_text(out.string() + ".json", dump(meta));
  std::cout << "trained " << out.string() << " (train accuracy " << model.training_meta().train_accuracy << ")\n";
  return 0;
}

// ---------------------------------------------------------------- build-lib

struct BuildLibArgs {
  std::string corpus;
  std::string out;
  std::optional<std::uint64_t> seed;
  int palette_size = 5;
  std::size_t min_region = 64;
};

int run_build_lib(const BuildLibArgs& a) {
  const fs::path corpus(a.corpus);
  std::vector<ncf::LabeledImage> items;
  try {
    for (auto& p : read_pairs(corpus / "images", corpus / "masks")) items.push_back({p.image, p.mask});
  } catch (const ncf::Error& e) {
    // Every corpus problem is a data error here, including mask dimensions.
    throw ExitError{kExitData, e.what()};
  }
  ncf::LibraryConfig config;
  config.palette_size = a.palette_size;
  config.min_region_pixels = a.min_region;
  const auto lib = ncf::build_library(items, config, resolve_seed(a.seed));
  lib.save(a.out);
  std::cout << "library with M=" << lib.num_classes() << " classes from " << items.size() << " images -> " << a.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- attack

struct AttackArgs {
  std::string images;
  std::string masks;
  std::string lib;
  std::string model;
  std::string eval_models;
  std::string labels;
  std::string variant = "ncf";
  std::string out;
  std::string csv;
  int eta = 50;
  int iterations = 15;
  int resets = 10;
  double epsilon = 0.2;
  std::optional<double> step;
  double momentum = 0.6;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = ncf::default_jobs();
};

int run_attack(const AttackArgs& a) {
  const ncf::AttackKind kind = ncf::parse_attack_kind(a.variant);
  ncf::AttackConfig config;
  config.eta = a.eta;
  config.iterations = a.iterations;
  config.resets = a.resets;
  config.epsilon = a.epsilon;
  config.step = a.step;
  config.momentum = a.momentum;
  config.seed = resolve_seed(a.seed);
  config.validate();

  const auto substitutes = load_models(a.model);
  const ncf::OraclePtr substitute =
      substitutes.size() == 1 ? substitutes.front() : std::make_shared<ncf::EnsembleOracle>(substitutes);
  const std::vector<ncf::OraclePtr> eval_oracles =
      a.eval_models.empty() ? std::vector<ncf::OraclePtr>{} : load_models(a.eval_models);

  const ncf::DistributionLibrary lib = a.lib == "none" ? ncf::DistributionLibrary{} : ncf::DistributionLibrary::load(a.lib);

  auto pairs = read_pairs(a.images, a.masks);
  fs::path labels_path = a.labels;
  if (labels_path.empty() && fs::exists(fs::path(a.images).parent_path() / "labels.csv")) {
    labels_path = fs::path(a.images).parent_path() / "labels.csv";
  }
  std::optional<std::map<std::string, int>> labels;
  if (!labels_path.empty()) labels = label_map(labels_path);

  std::vector<ncf::AttackItem> items;
  items.reserve(pairs.size());
  for (auto& p : pairs) {
    ncf::AttackItem item{p.id, std::move(p.image), std::move(p.mask), 0};
    if (labels) {
      const auto it = labels->find(item.id);
      if (it == labels->end()) throw ExitError{kExitModel, "no label for " + item.id + " in " + labels_path.string()};
      item.label = it->second;
    } else {
      // Without labels the substitute's clean prediction is the class to move away from.
      item.label = substitute->logits(item.image).argmax();
    }
    items.push_back(std::move(item));
  }

  ncf::BatchOptions options;
  options.kind = kind;
  options.config = config;
  options.jobs = a.jobs;
  std::vector<double> seconds;
  const auto results = ncf::run_attacks(items, *substitute, lib, options, eval_oracles, &seconds);

  const fs::path out(a.out);
  fs::create_directories(out);
  const ncf::AttackConfig effective = ncf::variant_config(kind, config);
  json flags = {{"images", a.images},
                {"masks", a.masks},
                {"lib", a.lib},
                {"model", a.model},
                {"eval_models", a.eval_models},
                {"labels", labels_path.string()},
                {"variant", std::string(ncf::to_string(kind))},
                {"substitute", substitute->name()},
                {"library_classes", lib.num_classes()}};
  flags.update(effective.to_json());

  auto report = ncf::summarize_attacks(items, results, *substitute, eval_oracles, flags, seconds);
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < items.size(); ++i) index_of[items[i].id] = i;
  for (auto& summary : report.images) {
    const std::size_t i = index_of.at(summary.id);
    summary.image = summary.id + ".png";
    ncf::io::write_png(out / summary.image, results[i].adversarial);
    ncf::AttackConfig per_image = effective;
    per_image.seed = ncf::image_seed(config.seed, summary.id);
    json j = results[i].to_json(per_image);
    j["id"] = summary.id;
    j["label"] = summary.label;
    j["image"] = summary.image;
    write_text(out / (summary.id + ".json"), dump(j));
  }
  write_text(out / "report.json", dump(report.to_json()));
  write_text(out / "timing.json", dump(report.timing_json()));
  if (!a.csv.empty()) write_text(a.csv, report.to_csv());

  for (const auto& o : report.oracles) {
    std::cout << o.name << (o.white_box ? "*" : "") << " success " << o.fooled << "/" << o.images << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string adv;
  std::string models;
  std::string labels;
  std::string white_box;
  std::string out;
  std::string csv;
  std::size_t jobs = ncf::default_jobs();
};

int run_eval(const EvalArgs& a) {
  const auto models = load_models(a.models);
  std::map<std::string, int> labels;
  try {
    labels = label_map(a.labels);
  } catch (const ncf::Error& e) {
    throw ExitError{kExitModel, e.what()};
  }

  std::vector<ncf::LabeledRgb> images;
  for (const auto& path : list_images(a.adv)) {
    const std::string id = path.stem().string();
    const auto it = labels.find(id);
    if (it == labels.end()) throw ExitError{kExitModel, "no label for " + id + " in " + a.labels};
    images.push_back({id, ncf::io::read_image(path), it->second});
  }

  std::optional<std::string> white_box;
  if (!a.white_box.empty()) {
    white_box = a.white_box;
  } else if (const fs::path attack_report = fs::path(a.adv) / "report.json"; fs::exists(attack_report)) {
    std::ifstream in(attack_report);
    const json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.contains("config") && j["config"].contains("substitute")) {
      white_box = j["config"]["substitute"].get<std::string>();
    }
  }

  std::vector<std::string> names;
  for (const auto& m : models) names.push_back(m->name());
  const json flags = {{"adv", a.adv}, {"models", names}, {"labels", a.labels}, {"white_box", white_box.value_or("")}};
  const auto report = ncf::evaluate(images, models, white_box, flags, a.jobs);
  if (a.out.empty()) {
    std::cout << dump(report.to_json());
  } else {
    write_text(a.out, dump(report.to_json()));
    for (const auto& o : report.oracles) {
      std::cout << o.name << (o.white_box ? "*" : "") << " success " << o.fooled << "/" << o.images << "\n";
    }
  }
  if (!a.csv.empty()) write_text(a.csv, report.to_csv());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Natural color attacks on image classifiers"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic shapes dataset");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->check(CLI::Range(3, 10));
  synth_cmd->add_option("--per-class", synth.per_class, "Images per class")->check(CLI::Range(100, 1000000));
  synth_cmd->add_option("--seed", synth.seed, "Seed (falls back to NCF_SEED)");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a toy classifier on a dataset directory");
  train_cmd->add_option("--data", train.data, "Dataset directory (images/, masks/, labels.csv)")->required();
  train_cmd->add_option("--out", train.out, "Checkpoint path; metadata goes to <out>.json")->required();
  train_cmd->add_option("--epochs", train.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--classes", train.classes, "Class count (default: max label + 1)")->check(CLI::Range(2, 4096));
  train_cmd->add_option("--lr", train.lr, "SGD learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train.seed, "Seed (falls back to NCF_SEED)");

  BuildLibArgs build;
  auto* build_cmd = app.add_subcommand("build-lib", "Build the color distribution library from a segmented corpus");
  build_cmd->add_option("--corpus", build.corpus, "Corpus directory with images/ and masks/")->required();
  build_cmd->add_option("--out", build.out, "Library JSON path")->required();
  build_cmd->add_option("--seed", build.seed, "Seed (falls back to NCF_SEED)");
  build_cmd->add_option("--palette-size", build.palette_size, "Colors per palette")->check(CLI::Range(1, 64));
  build_cmd->add_option("--min-region", build.min_region, "Smallest class region used, in pixels");

  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "Craft adversarial images");
  attack_cmd->add_option("--images", attack.images, "Directory of clean images")->required();
  attack_cmd->add_option("--masks", attack.masks, "Directory of segmentation masks")->required();
  attack_cmd->add_option("--lib", attack.lib, "Library JSON, or 'none' for an empty library")->required();
  attack_cmd->add_option("--model", attack.model, "Substitute checkpoint(s); a comma list attacks the logit ensemble")
      ->required();
  attack_cmd->add_option("--eval-models", attack.eval_models, "Comma list of checkpoints to report success on");
  attack_cmd->add_option("--labels", attack.labels, "labels.csv (default: <images>/../labels.csv if present)");
  attack_cmd->add_option("--eta", attack.eta, "Random-search width")->check(CLI::PositiveNumber);
  attack_cmd->add_option("--iters", attack.iterations, "Neighborhood-search iterations")->check(CLI::NonNegativeNumber);
  attack_cmd->add_option("--resets", attack.resets, "Initialization resets")->check(CLI::PositiveNumber);
  attack_cmd->add_option("--eps", attack.epsilon, "L-infinity radius on the transfer matrix")
      ->check(CLI::NonNegativeNumber);
  attack_cmd->add_option("--step", attack.step, "Step size (default eps / iters)")->check(CLI::NonNegativeNumber);
  attack_cmd->add_option("--momentum", attack.momentum, "Momentum decay")->check(CLI::NonNegativeNumber);
  attack_cmd->add_option("--variant", attack.variant, "ncf, ncf-ns, ncf-ir, ncf-ir-ns or random-color")
      ->check(CLI::IsMember({"ncf", "ncf-ns", "ncf-ir", "ncf-ir-ns", "random-color"}));
  attack_cmd->add_option("--seed", attack.seed, "Seed (falls back to NCF_SEED)");
  attack_cmd->add_option("--out", attack.out, "Output directory")->required();
  attack_cmd->add_option("--csv", attack.csv, "Also write the per-oracle table as CSV");
  attack_cmd->add_option("--jobs", attack.jobs, "Parallel images")->check(CLI::Range(1, 1024));

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Report success rates of images against models");
  eval_cmd->add_option("--adv", eval.adv, "Directory of (adversarial) images")->required();
  eval_cmd->add_option("--models", eval.models, "Comma list of checkpoints")->required();
  eval_cmd->add_option("--labels", eval.labels, "labels.csv")->required();
  eval_cmd->add_option("--white-box", eval.white_box, "Name of the substitute model (default: from <adv>/report.json)");
  eval_cmd->add_option("--out", eval.out, "Report JSON path (default: stdout)");
  eval_cmd->add_option("--csv", eval.csv, "Also write the per-oracle table as CSV");
  eval_cmd->add_option("--jobs", eval.jobs, "Parallel images")->check(CLI::Range(1, 1024));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train);
    if (*build_cmd) return run_build_lib(build);
    if (*attack_cmd) return run_attack(attack);
    if (*eval_cmd) return run_eval(eval);
  } catch (const ExitError& e) {
    std::cerr << "ncf: " << e.message << "\n";
    return e.code;
  } catch (const ncf::Error& e) {
    std::cerr << "ncf: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "ncf: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
