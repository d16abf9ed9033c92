#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ncf/oracle.hpp"

namespace ncf {

// 64x64 RGB -> (x - 0.5) -> 3x3 conv, 8 filters, zero padding -> ReLU
//   -> 4x4 average pool -> linear -> C logits.
// Parameters are stored as float32 (the checkpoint precision); all
// arithmetic runs in double.
class ToyClassifier final : public ModelOracle {
 public:
  static constexpr int kInputSize = 64;
  static constexpr int kFilters = 8;
  static constexpr int kKernel = 3;
  static constexpr int kPool = 4;
  static constexpr int kPooledSize = kInputSize / kPool;
  static constexpr int kFeatures = kFilters * kPooledSize * kPooledSize;
  static constexpr std::uint32_t kArchitectureId = 1;

  struct TrainingMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    double train_accuracy = 0.0;
  };

  // All-zero parameters.
  explicit ToyClassifier(std::size_t num_classes, std::string name = "toy");

  static ToyClassifier random_init(std::size_t num_classes, std::uint64_t seed, std::string name = "toy");

  std::size_t num_classes() const override { return num_classes_; }
  std::string name() const override { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  int input_width() const override { return kInputSize; }
  int input_height() const override { return kInputSize; }
  bool supports_gradient() const override { return true; }

  Logits logits(const RgbImage& img) const override;
  std::vector<Vec3> logits_vjp(const RgbImage& img, const Eigen::VectorXd& cotangent) const override;
  LossGradient loss_and_input_gradient(const RgbImage& img, int y) const override;

  // Flat parameter vector: conv weights [f][c][ky][kx], conv bias [f],
  // linear weights [class][feature], linear bias [class]. Feature index is
  // (f * 16 + py) * 16 + px.
  std::span<const float> parameters() const noexcept { return params_; }
  std::span<float> parameters() noexcept { return params_; }
  static std::size_t parameter_count(std::size_t num_classes);

  const TrainingMeta& training_meta() const noexcept { return meta_; }
  void set_training_meta(const TrainingMeta& meta) { meta_ = meta; }

  // Versioned little-endian checkpoint with trailing CRC32.
  std::vector<std::uint8_t> serialize() const;
  static ToyClassifier deserialize(std::span<const std::uint8_t> bytes, std::string name = "toy");
  void save(const std::filesystem::path& path) const;
  static ToyClassifier load(const std::filesystem::path& path);

  // Cross-entropy loss and its parameter gradient for one sample.
  double cross_entropy_gradient(const RgbImage& img, int label, std::span<double> param_grad) const;

 private:
  struct Activations;

  void forward(const RgbImage& img, Activations& act) const;
  void backward(const Activations& act, const Eigen::VectorXd& dz, std::vector<Vec3>* input_grad,
                std::span<double> param_grad) const;

  std::size_t num_classes_;
  std::string name_;
  std::vector<float> params_;
  TrainingMeta meta_;
};

struct TrainingSample {
  RgbImage image;
  int label = 0;
};

struct TrainingConfig {
  std::uint64_t seed = 0;
  int epochs = 30;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
};

// Mini-batch SGD with momentum on softmax cross-entropy. Samples are first put
// into a canonical content order, so the result depends only on the multiset
// of samples and the seed.
ToyClassifier train_toy(std::span<const TrainingSample> dataset, std::size_t num_classes, const TrainingConfig& config,
                        std::string name = "toy");

double accuracy(const ModelOracle& oracle, std::span<const TrainingSample> samples);

}  // namespace ncf
