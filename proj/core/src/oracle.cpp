#include "ncf/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace ncf {

int Logits::argmax() const {
  if (z.size() == 0) throw Error(ErrorCode::InvalidArgument, "argmax of empty logits");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < z.size(); ++i) {
    if (z[i] > z[best]) best = i;
  }
  return static_cast<int>(best);
}

Eigen::VectorXd Logits::softmax() const {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

int strongest_other_class(const Logits& logits, int y) {
  const auto c = static_cast<int>(logits.z.size());
  if (c < 2 || y < 0 || y >= c) throw Error(ErrorCode::InvalidArgument, "label out of range");
  int best = -1;
  for (int j = 0; j < c; ++j) {
    if (j == y) continue;
    if (best < 0 || logits.z[j] > logits.z[best]) best = j;
  }
  return best;
}

double cw_loss(const Logits& logits, int y) { return logits.z[strongest_other_class(logits, y)] - logits.z[y]; }

void ModelOracle::check_input(const RgbImage& img) const {
  if (img.width != input_width() || img.height != input_height()) {
    throw Error(ErrorCode::ShapeMismatch, name() + " expects " + std::to_string(input_width()) + "x" +
                                              std::to_string(input_height()) + " input, got " +
                                              std::to_string(img.width) + "x" + std::to_string(img.height));
  }
}

std::vector<Vec3> ModelOracle::logits_vjp(const RgbImage&, const Eigen::VectorXd&) const {
  throw Error(ErrorCode::NoGradientSupport, name() + " exposes logits only");
}

LossGradient ModelOracle::loss_and_input_gradient(const RgbImage& img, int y) const {
  if (!supports_gradient()) throw Error(ErrorCode::NoGradientSupport, name() + " exposes logits only");
  LossGradient out;
  out.logits = logits(img);
  const int j = strongest_other_class(out.logits, y);
  out.loss = out.logits.z[j] - out.logits.z[y];
  Eigen::VectorXd cot = Eigen::VectorXd::Zero(out.logits.z.size());
  cot[j] = 1.0;
  cot[y] = -1.0;
  out.grad = logits_vjp(img, cot);
  return out;
}

EnsembleOracle::EnsembleOracle(std::vector<OraclePtr> members) : members_(std::move(members)) {
  if (members_.empty()) throw Error(ErrorCode::InvalidArgument, "ensemble needs at least one member");
  for (const auto& m : members_) {
    if (m->num_classes() != members_.front()->num_classes()) {
      throw Error(ErrorCode::ClassCountMismatch, "ensemble members disagree on the number of classes");
    }
    if (m->input_width() != members_.front()->input_width() || m->input_height() != members_.front()->input_height()) {
      throw Error(ErrorCode::ShapeMismatch, "ensemble members disagree on input resolution");
    }
  }
}

std::size_t EnsembleOracle::num_classes() const { return members_.front()->num_classes(); }

std::string EnsembleOracle::name() const {
  std::string n = "ensemble(";
  for (std::size_t i = 0; i < members_.size(); ++i) n += (i ? "," : "") + members_[i]->name();
  return n + ")";
}

int EnsembleOracle::input_width() const { return members_.front()->input_width(); }
int EnsembleOracle::input_height() const { return members_.front()->input_height(); }

bool EnsembleOracle::supports_gradient() const {
  return std::all_of(members_.begin(), members_.end(), [](const auto& m) { return m->supports_gradient(); });
}

Logits EnsembleOracle::logits(const RgbImage& img) const {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_classes()));
  for (const auto& m : members_) sum += m->logits(img).z;
  return {sum / static_cast<double>(members_.size())};
}

std::vector<Vec3> EnsembleOracle::logits_vjp(const RgbImage& img, const Eigen::VectorXd& cotangent) const {
  if (!supports_gradient()) throw Error(ErrorCode::NoGradientSupport, name() + " has a logits-only member");
  std::vector<Vec3> sum(img.size(), Vec3::Zero());
  const double inv = 1.0 / static_cast<double>(members_.size());
  for (const auto& m : members_) {
    const auto g = m->logits_vjp(img, cotangent);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += inv * g[i];
  }
  return sum;
}

namespace {

struct Tap {
  int i0;
  int i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

Tap bilinear_tap(int out_index, int out_size, int in_size) {
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  double src = (out_index + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const int i0 = static_cast<int>(std::floor(src));
  const int i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, src - i0};
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& img, int width, int height) {
  if (img.width == width && img.height == height) return img;
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const Tap ty = bilinear_tap(y, height, img.height);
    for (int x = 0; x < width; ++x) {
      const Tap tx = bilinear_tap(x, width, img.width);
      out.at(x, y) = (1 - ty.w1) * ((1 - tx.w1) * img.at(tx.i0, ty.i0) + tx.w1 * img.at(tx.i1, ty.i0)) +
                     ty.w1 * ((1 - tx.w1) * img.at(tx.i0, ty.i1) + tx.w1 * img.at(tx.i1, ty.i1));
    }
  }
  return out;
}

std::vector<Vec3> resize_bilinear_transpose(std::span<const Vec3> grad_out, int out_width, int out_height,
                                            int in_width, int in_height) {
  if (out_width == in_width && out_height == in_height) return {grad_out.begin(), grad_out.end()};
  std::vector<Vec3> grad_in(static_cast<std::size_t>(in_width) * in_height, Vec3::Zero());
  auto at = [&](int x, int y) -> Vec3& { return grad_in[static_cast<std::size_t>(y) * in_width + x]; };
  for (int y = 0; y < out_height; ++y) {
    const Tap ty = bilinear_tap(y, out_height, in_height);
    for (int x = 0; x < out_width; ++x) {
      const Tap tx = bilinear_tap(x, out_width, in_width);
      const Vec3& g = grad_out[static_cast<std::size_t>(y) * out_width + x];
      at(tx.i0, ty.i0) += (1 - ty.w1) * (1 - tx.w1) * g;
      at(tx.i1, ty.i0) += (1 - ty.w1) * tx.w1 * g;
      at(tx.i0, ty.i1) += ty.w1 * (1 - tx.w1) * g;
      at(tx.i1, ty.i1) += ty.w1 * tx.w1 * g;
    }
  }
  return grad_in;
}

ResizingOracle::ResizingOracle(OraclePtr inner, int width, int height)
    : inner_(std::move(inner)), width_(width), height_(height) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "resize target must be positive");
}

Logits ResizingOracle::logits(const RgbImage& img) const {
  check_input(img);
  return inner_->logits(resize_bilinear(img, inner_->input_width(), inner_->input_height()));
}

std::vector<Vec3> ResizingOracle::logits_vjp(const RgbImage& img, const Eigen::VectorXd& cotangent) const {
  check_input(img);
  const auto g = inner_->logits_vjp(resize_bilinear(img, inner_->input_width(), inner_->input_height()), cotangent);
  return resize_bilinear_transpose(g, inner_->input_width(), inner_->input_height(), width_, height_);
}

}  // namespace ncf
