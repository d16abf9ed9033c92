#include "ncf/toy_classifier.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ncf/rng.hpp"

namespace ncf {

namespace {

constexpr int kSize = ToyClassifier::kInputSize;
constexpr int kPadded = kSize + 2;
constexpr int kPlane = kSize * kSize;
constexpr int kPaddedPlane = kPadded * kPadded;
constexpr int kConvWeights = ToyClassifier::kFilters * 3 * ToyClassifier::kKernel * ToyClassifier::kKernel;
constexpr std::size_t kConvBiasOffset = kConvWeights;
constexpr std::size_t kFcOffset = kConvBiasOffset + ToyClassifier::kFilters;
constexpr std::array<char, 4> kMagic{'N', 'C', 'F', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

constexpr int kTaps = 3 * ToyClassifier::kKernel * ToyClassifier::kKernel;
constexpr int kBlock = 16;

// pre[f][y][x] = bias[f] + sum over (c, ky, kx) of w * input[c][y + ky][x + kx],
// with the taps accumulated in that fixed order. No FMA in either clone, so
// both produce identical bits.
[[gnu::target_clones("avx2", "default")]] void conv_forward(const double* __restrict w,
                                                             const double* __restrict bias,
                                                             const double* __restrict input,
                                                             double* __restrict pre) {
  int offset[kTaps];
  for (int t = 0; t < kTaps; ++t) offset[t] = (t / 9) * kPaddedPlane + (t / 3 % 3) * kPadded + t % 3;
  for (int f = 0; f < ToyClassifier::kFilters; ++f) {
    const double* wf = w + f * kTaps;
    for (int y = 0; y < kSize; ++y) {
      for (int xb = 0; xb < kSize; xb += kBlock) {
        double acc[kBlock];
        for (int k = 0; k < kBlock; ++k) acc[k] = bias[f];
        const double* base = input + y * kPadded + xb;
#pragma GCC unroll 1
        for (int t = 0; t < kTaps; ++t) {
          const double wt = wf[t];
          const double* src = base + offset[t];
          for (int k = 0; k < kBlock; ++k) acc[k] += wt * src[k];
        }
        double* out = pre + f * kPlane + y * kSize + xb;
        for (int k = 0; k < kBlock; ++k) out[k] = acc[k];
      }
    }
  }
}

// Transposed convolution: grad[c][y][x] = sum over (f, ky, kx) of
// w[f][c][ky][kx] * d[f][y + 1 - ky][x + 1 - kx], where dpad holds d with a
// one-pixel zero border.
[[gnu::target_clones("avx2", "default")]] void conv_input_grad(const double* __restrict w,
                                                                const double* __restrict dpad,
                                                                double* __restrict grad) {
  constexpr int kGradTaps = ToyClassifier::kFilters * 9;
  int offset[kGradTaps];
  for (int t = 0; t < kGradTaps; ++t) {
    offset[t] = (t / 9) * kPaddedPlane + (2 - t / 3 % 3) * kPadded + 2 - t % 3;
  }
  for (int c = 0; c < 3; ++c) {
    double wc[kGradTaps];
    for (int t = 0; t < kGradTaps; ++t) wc[t] = w[((t / 9) * 3 + c) * 9 + t % 9];
    for (int y = 0; y < kSize; ++y) {
      for (int xb = 0; xb < kSize; xb += kBlock) {
        double acc[kBlock] = {};
        const double* base = dpad + y * kPadded + xb;
#pragma GCC unroll 1
        for (int t = 0; t < kGradTaps; ++t) {
          const double wt = wc[t];
          const double* src = base + offset[t];
          for (int k = 0; k < kBlock; ++k) acc[k] += wt * src[k];
        }
        double* out = grad + c * kPlane + y * kSize + xb;
        for (int k = 0; k < kBlock; ++k) out[k] = acc[k];
      }
    }
  }
}

inline double dot_row(const double* __restrict a, const double* __restrict b) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  for (int x = 0; x < kSize; x += 4) {
    for (int k = 0; k < 4; ++k) acc[k] += a[x + k] * b[x + k];
  }
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

std::size_t fc_bias_offset(std::size_t classes) { return kFcOffset + classes * ToyClassifier::kFeatures; }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  return v;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::uint64_t content_key(const TrainingSample& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(&s.label, sizeof(s.label));
  mix(&s.image.width, sizeof(int));
  mix(&s.image.height, sizeof(int));
  for (const auto& p : s.image.pixels) mix(p.data(), 3 * sizeof(double));
  return h;
}

}  // namespace

struct ToyClassifier::Activations {
  std::vector<double> input;  // padded planes, (x - 0.5)
  std::vector<double> pre;    // conv output before the rectifier
  Eigen::VectorXd features;
  Eigen::VectorXd z;
};

ToyClassifier::ToyClassifier(std::size_t num_classes, std::string name)
    : num_classes_(num_classes), name_(std::move(name)), params_(parameter_count(num_classes), 0.0f) {
  if (num_classes < 2) throw Error(ErrorCode::InvalidArgument, "a classifier needs at least two classes");
}

std::size_t ToyClassifier::parameter_count(std::size_t num_classes) {
  return fc_bias_offset(num_classes) + num_classes;
}

ToyClassifier ToyClassifier::random_init(std::size_t num_classes, std::uint64_t seed, std::string name) {
  ToyClassifier model(num_classes, std::move(name));
  Rng rng(derive_seed(seed, {1}));
  const double conv_scale = std::sqrt(2.0 / (3.0 * kKernel * kKernel));
  for (int i = 0; i < kConvWeights; ++i) model.params_[i] = static_cast<float>(conv_scale * standard_normal(rng));
  const double fc_scale = std::sqrt(1.0 / kFeatures);
  for (std::size_t i = kFcOffset; i < fc_bias_offset(num_classes); ++i) {
    model.params_[i] = static_cast<float>(fc_scale * standard_normal(rng));
  }
  return model;
}

void ToyClassifier::forward(const RgbImage& img, Activations& act) const {
  check_input(img);
  // The padding border is never written, so it stays zero across calls.
  if (act.input.size() != static_cast<std::size_t>(3 * kPaddedPlane)) act.input.assign(3 * kPaddedPlane, 0.0);
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      const Vec3& p = img.pixels[static_cast<std::size_t>(y) * kSize + x];
      for (int c = 0; c < 3; ++c) act.input[c * kPaddedPlane + (y + 1) * kPadded + x + 1] = p[c] - 0.5;
    }
  }
  std::array<double, kConvWeights + kFilters> wd;
  for (int i = 0; i < kConvWeights + kFilters; ++i) wd[i] = params_[i];
  act.pre.resize(kFilters * kPlane);
  conv_forward(wd.data(), wd.data() + kConvWeights, act.input.data(), act.pre.data());

  act.features.setZero(kFeatures);
  for (int f = 0; f < kFilters; ++f) {
    for (int y = 0; y < kSize; ++y) {
      const double* row = act.pre.data() + f * kPlane + y * kSize;
      double* feat = act.features.data() + (f * kPooledSize + y / kPool) * kPooledSize;
      for (int px = 0; px < kPooledSize; ++px) {
        double s = 0.0;
        for (int k = 0; k < kPool; ++k) s += std::max(row[px * kPool + k], 0.0);
        feat[px] += s;
      }
    }
  }
  act.features *= 1.0 / (kPool * kPool);
  const auto classes = static_cast<Eigen::Index>(num_classes_);
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
      params_.data() + kFcOffset, classes, kFeatures);
  Eigen::Map<const Eigen::VectorXf> b(params_.data() + fc_bias_offset(num_classes_), classes);
  act.z = w.cast<double>() * act.features + b.cast<double>();
}

void ToyClassifier::backward(const Activations& act, const Eigen::VectorXd& dz, std::vector<Vec3>* input_grad,
                             std::span<double> param_grad) const {
  const auto classes = static_cast<Eigen::Index>(num_classes_);
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
      params_.data() + kFcOffset, classes, kFeatures);
  const Eigen::VectorXd dfeat = (w.cast<double>().transpose() * dz) * (1.0 / (kPool * kPool));
  const bool want_params = !param_grad.empty();
  if (want_params) {
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
        param_grad.data() + kFcOffset, classes, kFeatures);
    gw.noalias() += dz * act.features.transpose();
    for (Eigen::Index k = 0; k < classes; ++k) param_grad[fc_bias_offset(num_classes_) + k] += dz[k];
  }

  // Gradient w.r.t. the conv output, stored with a one-pixel zero border.
  thread_local std::vector<double> dpad;
  if (dpad.size() != static_cast<std::size_t>(kFilters * kPaddedPlane)) dpad.assign(kFilters * kPaddedPlane, 0.0);
  for (int f = 0; f < kFilters; ++f) {
    for (int y = 0; y < kSize; ++y) {
      const double* pre = act.pre.data() + f * kPlane + y * kSize;
      const double* df = dfeat.data() + (f * kPooledSize + y / kPool) * kPooledSize;
      double* d = dpad.data() + f * kPaddedPlane + (y + 1) * kPadded + 1;
      for (int x = 0; x < kSize; ++x) d[x] = pre[x] > 0.0 ? df[x / kPool] : 0.0;
    }
  }

  if (want_params) {
    for (int f = 0; f < kFilters; ++f) {
      const double* d = dpad.data() + f * kPaddedPlane + kPadded + 1;
      double bias = 0.0;
      for (int y = 0; y < kSize; ++y) bias += std::accumulate(d + y * kPadded, d + y * kPadded + kSize, 0.0);
      param_grad[kConvBiasOffset + f] += bias;
      for (int c = 0; c < 3; ++c) {
        for (int ky = 0; ky < kKernel; ++ky) {
          for (int kx = 0; kx < kKernel; ++kx) {
            const double* in = act.input.data() + c * kPaddedPlane + ky * kPadded + kx;
            double acc = 0.0;
            for (int y = 0; y < kSize; ++y) acc += dot_row(d + y * kPadded, in + y * kPadded);
            param_grad[((f * 3 + c) * kKernel + ky) * kKernel + kx] += acc;
          }
        }
      }
    }
  }

  if (input_grad != nullptr) {
    std::array<double, kConvWeights> wd;
    for (int i = 0; i < kConvWeights; ++i) wd[i] = params_[i];
    thread_local std::vector<double> planes;
    planes.resize(3 * kPlane);
    conv_input_grad(wd.data(), dpad.data(), planes.data());
    input_grad->resize(kPlane);
    for (int i = 0; i < kPlane; ++i) (*input_grad)[i] = Vec3(planes[i], planes[kPlane + i], planes[2 * kPlane + i]);
  }
}

Logits ToyClassifier::logits(const RgbImage& img) const {
  thread_local Activations act;
  forward(img, act);
  return {act.z};
}

std::vector<Vec3> ToyClassifier::logits_vjp(const RgbImage& img, const Eigen::VectorXd& cotangent) const {
  thread_local Activations act;
  forward(img, act);
  std::vector<Vec3> grad;
  backward(act, cotangent, &grad, {});
  return grad;
}

LossGradient ToyClassifier::loss_and_input_gradient(const RgbImage& img, int y) const {
  thread_local Activations act;
  forward(img, act);
  LossGradient out;
  out.logits = {act.z};
  const int j = strongest_other_class(out.logits, y);
  out.loss = act.z[j] - act.z[y];
  Eigen::VectorXd cot = Eigen::VectorXd::Zero(act.z.size());
  cot[j] = 1.0;
  cot[y] = -1.0;
  backward(act, cot, &out.grad, {});
  return out;
}

double ToyClassifier::cross_entropy_gradient(const RgbImage& img, int label, std::span<double> param_grad) const {
  thread_local Activations act;
  forward(img, act);
  const Eigen::VectorXd p = Logits{act.z}.softmax();
  Eigen::VectorXd dz = p;
  dz[label] -= 1.0;
  backward(act, dz, nullptr, param_grad);
  return -std::log(std::max(p[label], 1e-300));
}

std::vector<std::uint8_t> ToyClassifier::serialize() const {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(num_classes_));
  put_u32(out, kArchitectureId);
  for (float v : params_) put_u32(out, std::bit_cast<std::uint32_t>(v));
  put_u32(out, crc32_of(out));
  return out;
}

ToyClassifier ToyClassifier::deserialize(std::span<const std::uint8_t> bytes, std::string name) {
  constexpr std::size_t kHeader = 16;
  if (bytes.size() < kHeader + 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw Error(ErrorCode::Format, "not a toy classifier checkpoint");
  }
  if (get_u32(bytes, 4) != kCheckpointVersion) throw Error(ErrorCode::Format, "unsupported checkpoint version");
  if (get_u32(bytes, 12) != kArchitectureId) throw Error(ErrorCode::Format, "unknown architecture id");
  const std::size_t classes = get_u32(bytes, 8);
  if (classes < 2 || classes > 4096) throw Error(ErrorCode::Format, "implausible class count");
  const std::size_t count = parameter_count(classes);
  if (bytes.size() != kHeader + 4 * count + 4) throw Error(ErrorCode::Format, "checkpoint size mismatch");
  const std::size_t body = bytes.size() - 4;
  if (crc32_of(bytes.first(body)) != get_u32(bytes, body)) throw Error(ErrorCode::Format, "checkpoint CRC mismatch");
  ToyClassifier model(classes, std::move(name));
  for (std::size_t i = 0; i < count; ++i) model.params_[i] = std::bit_cast<float>(get_u32(bytes, kHeader + 4 * i));
  return model;
}

void ToyClassifier::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ToyClassifier ToyClassifier::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return deserialize(bytes, path.stem().string());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

ToyClassifier train_toy(std::span<const TrainingSample> dataset, std::size_t num_classes, const TrainingConfig& config,
                        std::string name) {
  if (dataset.empty()) throw Error(ErrorCode::InvalidArgument, "empty training set");
  if (config.epochs < 0 || config.batch_size == 0) throw Error(ErrorCode::InvalidArgument, "bad training config");
  for (const auto& s : dataset) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw Error(ErrorCode::InvalidArgument, "training label out of range");
    }
  }

  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) keyed.emplace_back(content_key(dataset[i]), i);
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return dataset[a.second].label < dataset[b.second].label;
  });
  std::vector<std::size_t> canonical;
  canonical.reserve(keyed.size());
  for (const auto& k : keyed) canonical.push_back(k.second);

  ToyClassifier model = ToyClassifier::random_init(num_classes, config.seed, std::move(name));
  const std::span<float> params = model.parameters();
  const std::size_t n_params = params.size();
  std::vector<double> velocity(n_params, 0.0);
  std::vector<double> grad(n_params);
  std::vector<std::size_t> order(canonical.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, {2, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = dataset[canonical[order[k]]];
        model.cross_entropy_gradient(s.image, s.label, grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t p = 0; p < n_params; ++p) {
        velocity[p] = config.momentum * velocity[p] + grad[p] * scale;
        params[p] = static_cast<float>(params[p] - config.learning_rate * velocity[p]);
      }
    }
  }

  model.set_training_meta({config.seed, config.epochs, accuracy(model, dataset)});
  return model;
}

double accuracy(const ModelOracle& oracle, std::span<const TrainingSample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (oracle.logits(s.image).argmax() == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace ncf
