#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ncf/dataset.hpp"
#include "ncf/distlib.hpp"
#include "ncf/experiment.hpp"
#include "ncf/image_io.hpp"
#include "ncf/toy_classifier.hpp"
#include "support.hpp"

using namespace ncf;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string err;
};

Run ncf_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() / ("ncf_cli_stderr_" + std::to_string(counter++));
  const std::string cmd = env + " " + NCF_CLI_PATH + " " + args + " >/dev/null 2>" + log.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = test::read_file(log);
  fs::remove(log);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::set<std::string> files_in(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), dir).string());
  return out;
}

void expect_same_tree(const fs::path& a, const fs::path& b, const std::set<std::string>& skip = {}) {
  const auto fa = files_in(a), fb = files_in(b);
  CHECK(fa == fb);
  for (const auto& f : fa) {
    if (skip.contains(f)) continue;
    CAPTURE(f);
    CHECK(test::read_file(a / f) == test::read_file(b / f));
  }
}

// Copies the listed ids of a dataset directory into a new one.
void subset(const fs::path& from, const fs::path& to, const std::vector<LabelEntry>& rows) {
  fs::remove_all(to);
  fs::create_directories(to / "images");
  fs::create_directories(to / "masks");
  std::ofstream csv(to / "labels.csv");
  csv << "id,label\n";
  for (const auto& r : rows) {
    fs::copy_file(from / "images" / (r.id + ".png"), to / "images" / (r.id + ".png"));
    fs::copy_file(from / "masks" / (r.id + ".pgm"), to / "masks" / (r.id + ".pgm"));
    csv << r.id << ',' << r.label << '\n';
  }
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(test::read_file(p)); }

struct World {
  fs::path root;
  fs::path data;   // 3 classes x 100
  fs::path model;  // trained on data
  std::vector<LabelEntry> labels;
};

const World& world() {
  static const World w = [] {
    World out;
    out.root = test::scratch_dir("cli");
    out.data = out.root / "data";
    REQUIRE(ncf_cli("synth --classes 3 --per-class 100 --seed 5 --out " + q(out.data)).code == 0);
    out.model = out.root / "A.ckpt";
    REQUIRE(ncf_cli("train --data " + q(out.data) + " --epochs 3 --seed 1 --out " + q(out.model)).code == 0);
    out.labels = read_labels(out.data / "labels.csv");
    return out;
  }();
  return w;
}

}  // namespace

TEST_CASE("synth writes a balanced, reproducible dataset") {
  const auto& w = world();
  CHECK(files_in(w.data / "images").size() == 300);
  CHECK(files_in(w.data / "masks").size() == 300);
  REQUIRE(w.labels.size() == 300);
  std::map<int, int> per_class;
  for (const auto& r : w.labels) {
    ++per_class[r.label];
    const auto mask = io::read_mask(w.data / "masks" / (r.id + ".pgm"));
    CHECK(std::set<int>(mask.labels.begin(), mask.labels.end()).size() == 2);
  }
  CHECK(per_class == std::map<int, int>{{0, 100}, {1, 100}, {2, 100}});

  const fs::path again = w.root / "data_again";
  REQUIRE(ncf_cli("synth --classes 3 --per-class 100 --seed 5 --out " + q(again)).code == 0);
  expect_same_tree(w.data, again);

  const fs::path env_seed = w.root / "data_env";
  REQUIRE(ncf_cli("synth --classes 3 --per-class 100 --out " + q(env_seed), "NCF_SEED=5").code == 0);
  expect_same_tree(w.data, env_seed);
}

TEST_CASE("usage errors exit with 2") {
  const auto& w = world();
  CHECK(ncf_cli("").code == 2);
  CHECK(ncf_cli("frobnicate").code == 2);
  CHECK(ncf_cli("synth --classes 2 --per-class 100 --out " + q(w.root / "x")).code == 2);
  CHECK(ncf_cli("synth --classes 3 --per-class 50 --out " + q(w.root / "x")).code == 2);
  CHECK(ncf_cli("synth --classes 3 --per-class 100").code == 2);
  CHECK(ncf_cli("attack --images a --masks b --lib none --model m --out o --eps -1").code == 2);
  CHECK(ncf_cli("attack --images a --masks b --lib none --model m --out o --variant bogus").code == 2);
}

TEST_CASE("train writes a loadable checkpoint with metadata") {
  const auto& w = world();
  const auto model = ToyClassifier::load(w.model);
  CHECK(model.num_classes() == 3);
  const auto meta = load_json(w.model.string() + ".json");
  CHECK(meta.at("epochs") == 3);
  CHECK(meta.at("seed") == 1);
  const fs::path twin = w.root / "A_twin.ckpt";
  REQUIRE(ncf_cli("train --data " + q(w.data) + " --epochs 3 --seed 1 --out " + q(twin)).code == 0);
  CHECK(test::read_file(twin) == test::read_file(w.model));
}

TEST_CASE("build-lib") {
  const auto& w = world();
  std::vector<LabelEntry> circles;
  for (const auto& r : w.labels)
    if (r.label == 0 && circles.size() < 30) circles.push_back(r);
  const fs::path corpus = w.root / "circles";
  subset(w.data, corpus, circles);

  const fs::path lib1 = w.root / "lib1.json", lib2 = w.root / "lib2.json";
  REQUIRE(ncf_cli("build-lib --corpus " + q(corpus) + " --seed 4 --out " + q(lib1)).code == 0);
  REQUIRE(ncf_cli("build-lib --corpus " + q(corpus) + " --seed 4 --out " + q(lib2)).code == 0);
  CHECK(load_json(lib1).at("header").at("M") == 2);
  CHECK(test::read_file(lib1) == test::read_file(lib2));

  const fs::path full = w.root / "full.json";
  REQUIRE(ncf_cli("build-lib --corpus " + q(w.data) + " --seed 4 --out " + q(full)).code == 0);
  CHECK(load_json(full).at("header").at("M") == 4);

  const fs::path broken = w.root / "broken";
  subset(w.data, broken, {w.labels.begin(), w.labels.begin() + 3});
  const std::string victim = w.labels[1].id + ".pgm";
  io::write_pgm(broken / "masks" / victim, SegmentationMask(32, 32));
  const Run bad = ncf_cli("build-lib --corpus " + q(broken) + " --out " + q(w.root / "bad.json"));
  CHECK(bad.code == 3);
  CHECK(bad.err.find(victim) != std::string::npos);

  const fs::path tiny = w.root / "tiny";
  subset(w.data, tiny, {w.labels.begin(), w.labels.begin() + 2});
  const Run empty = ncf_cli("build-lib --corpus " + q(tiny) + " --min-region 100000 --out " + q(w.root / "e.json"));
  CHECK(empty.code == 3);
  CHECK(empty.err.find("EmptyCorpus") != std::string::npos);
}

namespace {

struct AttackSetup {
  std::vector<LabelEntry> few;
  fs::path set;
  fs::path lib;
  std::string base;
};

const AttackSetup& attack_setup() {
  static const AttackSetup a = [] {
    const auto& w = world();
    AttackSetup out;
    for (std::size_t i = 0; i < w.labels.size(); i += 60) out.few.push_back(w.labels[i]);
    out.set = w.root / "few";
    subset(w.data, out.set, out.few);
    out.lib = w.root / "lib_full.json";
    REQUIRE(ncf_cli("build-lib --corpus " + q(w.data) + " --seed 2 --out " + q(out.lib)).code == 0);
    out.base = "attack --images " + q(out.set / "images") + " --masks " + q(out.set / "masks") + " --model " +
               q(w.model);
    return out;
  }();
  return a;
}

}  // namespace

TEST_CASE("attack defaults, variants, determinism and identity") {
  const auto& w = world();
  const auto& [few, set, lib, base] = attack_setup();

  SUBCASE("defaults are echoed") {
    const fs::path one = w.root / "one";
    subset(w.data, one, {few.front()});
    const fs::path out = w.root / "adv_defaults";
    REQUIRE(ncf_cli("attack --images " + q(one / "images") + " --masks " + q(one / "masks") + " --model " +
                    q(w.model) + " --lib " + q(lib) + " --seed 1 --out " + q(out))
                .code == 0);
    const auto cfg = load_json(out / "report.json").at("config");
    CHECK(cfg.at("eta") == 50);
    CHECK(cfg.at("iterations") == 15);
    CHECK(cfg.at("resets") == 10);
    CHECK(cfg.at("epsilon") == 0.2);
    CHECK(cfg.at("momentum") == 0.6);
    CHECK(std::abs(cfg.at("step").get<double>() - 0.013) < 5e-4);
    CHECK(cfg.at("variant") == "ncf");
    CHECK(load_json(out / (few.front().id + ".json")).at("resets").size() == 10);
  }

  SUBCASE("ablation variant") {
    const fs::path out = w.root / "adv_irns";
    REQUIRE(ncf_cli(base + " --lib " + q(lib) + " --variant ncf-ir-ns --eta 5 --seed 1 --out " + q(out)).code == 0);
    CHECK(load_json(out / "report.json").at("config").at("variant") == "ncf-ir-ns");
    for (const auto& r : few) {
      const auto j = load_json(out / (r.id + ".json"));
      CHECK(j.at("variant") == "ncf-ir-ns");
      REQUIRE(j.at("resets").size() == 1);
      CHECK(j.at("resets")[0].at("T") == j.at("resets")[0].at("T_prime"));
    }
  }

  SUBCASE("byte-identical across runs and job counts") {
    const std::string args = base + " --lib " + q(lib) + " --eta 4 --iters 3 --resets 2 --seed 9";
    const fs::path a = w.root / "det_a", b = w.root / "det_b", c = w.root / "det_c";
    REQUIRE(ncf_cli(args + " --jobs 1 --out " + q(a)).code == 0);
    REQUIRE(ncf_cli(args + " --jobs 1 --out " + q(b)).code == 0);
    REQUIRE(ncf_cli(args + " --jobs 8 --out " + q(c)).code == 0);
    expect_same_tree(a, b, {"timing.json"});
    expect_same_tree(a, c, {"timing.json"});
    CHECK(load_json(a / "timing.json").at("fingerprint") == load_json(a / "report.json").at("fingerprint"));

    const fs::path d = w.root / "det_env";
    REQUIRE(ncf_cli(base + " --lib " + q(lib) + " --eta 4 --iters 3 --resets 2 --jobs 2 --out " + q(d), "NCF_SEED=9")
                .code == 0);
    expect_same_tree(a, d, {"timing.json"});
  }

  SUBCASE("epsilon 0 with a self-library returns the input") {
    const fs::path one = w.root / "self";
    subset(w.data, one, {few[1]});
    const fs::path self_lib = w.root / "self_lib.json";
    REQUIRE(ncf_cli("build-lib --corpus " + q(one) + " --out " + q(self_lib)).code == 0);
    const fs::path out = w.root / "adv_self";
    REQUIRE(ncf_cli("attack --images " + q(one / "images") + " --masks " + q(one / "masks") + " --model " +
                    q(w.model) + " --lib " + q(self_lib) + " --eps 0 --eta 5 --resets 2 --out " + q(out))
                .code == 0);
    const auto clean = io::read_image(one / "images" / (few[1].id + ".png"));
    const auto adv = io::read_image(out / (few[1].id + ".png"));
    double worst = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i)
      worst = std::max(worst, (clean.pixels[i] - adv.pixels[i]).cwiseAbs().maxCoeff());
    CHECK(worst <= 1.0 / 255.0 + 1e-12);
  }

  SUBCASE("model and shape errors exit with 4") {
    const fs::path small = w.root / "small";
    fs::create_directories(small / "images");
    fs::create_directories(small / "masks");
    Rng rng(1);
    io::write_png(small / "images" / "s.png", test::random_rgb(rng, 32, 32));
    io::write_pgm(small / "masks" / "s.pgm", SegmentationMask(32, 32));
    std::ofstream(small / "labels.csv") << "id,label\ns,0\n";
    const Run shape = ncf_cli("attack --images " + q(small / "images") + " --masks " + q(small / "masks") +
                              " --model " + q(w.model) + " --lib none --out " + q(w.root / "adv_small"));
    CHECK(shape.code == 4);
    CHECK(ncf_cli("attack --images " + q(set / "images") + " --masks " + q(set / "masks") + " --model " +
                  q(w.root / "missing.ckpt") + " --lib none --out " + q(w.root / "o"))
              .code == 4);
    CHECK(ncf_cli(base + " --lib " + q(w.root / "missing.json") + " --out " + q(w.root / "o")).code == 3);
  }
}

TEST_CASE("eval") {
  const auto& w = world();
  std::vector<LabelEntry> few(w.labels.begin(), w.labels.begin() + 40);
  const fs::path set = w.root / "eval_set";
  subset(w.data, set, few);
  const auto model = ToyClassifier::load(w.model);

  std::vector<LabeledRgb> clean;
  for (const auto& r : few) clean.push_back({r.id, io::read_image(set / "images" / (r.id + ".png")), r.label});

  const fs::path r1 = w.root / "eval1.json", r2 = w.root / "eval2.json";
  const std::string args =
      "eval --adv " + q(set / "images") + " --models " + q(w.model) + " --labels " + q(set / "labels.csv");
  REQUIRE(ncf_cli(args + " --out " + q(r1)).code == 0);
  REQUIRE(ncf_cli(args + " --jobs 3 --out " + q(r2)).code == 0);
  const auto rep = load_json(r1);
  CHECK(rep.at("oracles")[0].at("success_rate").get<double>() == error_rate(model, clean));
  CHECK(test::read_file(r1) == test::read_file(r2));

  const fs::path wrong = w.root / "wrong.csv";
  {
    std::ofstream csv(wrong);
    csv << "id,label\n";
    for (const auto& c : clean) csv << c.id << ',' << (model.logits(c.image).argmax() + 1) % 3 << '\n';
  }
  const fs::path r3 = w.root / "eval3.json";
  REQUIRE(ncf_cli("eval --adv " + q(set / "images") + " --models " + q(w.model) + " --labels " + q(wrong) +
                  " --out " + q(r3))
              .code == 0);
  CHECK(load_json(r3).at("oracles")[0].at("success_rate") == 1.0);

  const fs::path partial = w.root / "partial.csv";
  std::ofstream(partial) << "id,label\n" << few[0].id << ",0\n";
  CHECK(ncf_cli("eval --adv " + q(set / "images") + " --models " + q(w.model) + " --labels " + q(partial)).code == 4);
}
