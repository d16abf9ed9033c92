#include <benchmark/benchmark.h>

#include <vector>

#include "ncf/attack.hpp"
#include "ncf/colorspace.hpp"
#include "ncf/dataset.hpp"
#include "ncf/palette.hpp"
#include "ncf/toy_classifier.hpp"
#include "ncf/transport.hpp"

using namespace ncf;

namespace {

struct Scene {
  SyntheticSample sample;
  ToyClassifier model{5};
  DistributionLibrary lib;
};

const Scene& scene() {
  static const Scene s = [] {
    Scene out;
    const auto train = make_synthetic({5, 20, 1, 64});
    std::vector<LabeledImage> corpus;
    for (const auto& t : train) corpus.push_back({t.image, t.mask});
    out.sample = train.front();
    out.model = ToyClassifier::random_init(5, 1, "bench");
    out.lib = build_library(corpus, {}, 1);
    return out;
  }();
  return s;
}

Mat3 spd(double a, double b, double c) {
  Mat3 m;
  m << a, 0.3, 0.1, 0.3, b, -0.2, 0.1, -0.2, c;
  return m;
}

}  // namespace

static void BM_RgbToLab(benchmark::State& state) {
  const RgbImage& img = scene().sample.image;
  for (auto _ : state) benchmark::DoNotOptimize(color::rgb_to_lab(img));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(img.size()));
}
BENCHMARK(BM_RgbToLab);

static void BM_LabToRgb(benchmark::State& state) {
  const LabImage lab = color::rgb_to_lab(scene().sample.image);
  for (auto _ : state) benchmark::DoNotOptimize(color::lab_to_rgb(lab));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(lab.size()));
}
BENCHMARK(BM_LabToRgb);

static void BM_MkTransfer(benchmark::State& state) {
  const Moments src{Vec3(50, 0, 0), spd(120, 40, 30)};
  const Moments dst{Vec3(60, 5, -5), spd(80, 60, 20)};
  for (auto _ : state) benchmark::DoNotOptimize(mk_transfer(src, dst));
}
BENCHMARK(BM_MkTransfer);

static void BM_ToyForward(benchmark::State& state) {
  const auto& s = scene();
  for (auto _ : state) benchmark::DoNotOptimize(s.model.logits(s.sample.image));
}
BENCHMARK(BM_ToyForward);

static void BM_ToyLossGradient(benchmark::State& state) {
  const auto& s = scene();
  for (auto _ : state) benchmark::DoNotOptimize(s.model.loss_and_input_gradient(s.sample.image, s.sample.label));
}
BENCHMARK(BM_ToyLossGradient);

static void BM_PaletteExtraction(benchmark::State& state) {
  const LabImage lab = color::rgb_to_lab(scene().sample.image);
  for (auto _ : state) benchmark::DoNotOptimize(extract_palette(lab.pixels, 5, 3));
}
BENCHMARK(BM_PaletteExtraction);

static void BM_RandomSearch(benchmark::State& state) {
  const auto& s = scene();
  const PreparedImage img = prepare_image(s.sample.image, s.sample.label, s.sample.mask);
  const int eta = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(random_search(img, s.model, s.lib, eta, 7));
}
BENCHMARK(BM_RandomSearch)->Arg(1)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

static void BM_NcfAttack(benchmark::State& state) {
  const auto& s = scene();
  AttackConfig cfg;
  cfg.seed = 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(ncf_attack(s.sample.image, s.sample.label, s.sample.mask, s.model, s.lib, cfg));
}
BENCHMARK(BM_NcfAttack)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
