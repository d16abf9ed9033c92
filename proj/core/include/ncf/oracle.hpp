#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ncf/image.hpp"

namespace ncf {

struct Logits {
  Eigen::VectorXd z;

  std::size_t size() const noexcept { return static_cast<std::size_t>(z.size()); }
  // Smallest index attaining the maximum.
  int argmax() const;
  Eigen::VectorXd softmax() const;
};

// Index of max{z_j : j != y}, smallest on ties.
int strongest_other_class(const Logits& logits, int y);

// max{z_j : j != y} - z_y. Positive iff the prediction differs from y.
double cw_loss(const Logits& logits, int y);

struct LossGradient {
  double loss = 0.0;
  Logits logits;
  std::vector<Vec3> grad;  // d loss / d RGB, per pixel
};

// Classifier contract. Black-box oracles implement logits() only; substitute
// oracles additionally back-propagate a cotangent on the logits to the input.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::string name() const = 0;
  virtual int input_width() const = 0;
  virtual int input_height() const = 0;
  virtual bool supports_gradient() const { return false; }

  // Throws ShapeMismatch if img does not match the input resolution.
  virtual Logits logits(const RgbImage& img) const = 0;

  // d(cotangent . z)/d img. Throws NoGradientSupport unless overridden.
  virtual std::vector<Vec3> logits_vjp(const RgbImage& img, const Eigen::VectorXd& cotangent) const;

  // C&W loss and its input gradient; subgradient uses the strongest_other_class.
  virtual LossGradient loss_and_input_gradient(const RgbImage& img, int y) const;

 protected:
  void check_input(const RgbImage& img) const;
};

using OraclePtr = std::shared_ptr<const ModelOracle>;

// Mean of member logits. Gradients are supported iff every member supports them.
class EnsembleOracle final : public ModelOracle {
 public:
  // Throws ClassCountMismatch or ShapeMismatch for inconsistent members.
  explicit EnsembleOracle(std::vector<OraclePtr> members);

  std::size_t num_classes() const override;
  std::string name() const override;
  int input_width() const override;
  int input_height() const override;
  bool supports_gradient() const override;
  Logits logits(const RgbImage& img) const override;
  std::vector<Vec3> logits_vjp(const RgbImage& img, const Eigen::VectorXd& cotangent) const override;

 private:
  std::vector<OraclePtr> members_;
};

// Bilinear (half-pixel centers) resampling to the wrapped oracle's resolution;
// gradients flow back through the transposed interpolation.
class ResizingOracle final : public ModelOracle {
 public:
  ResizingOracle(OraclePtr inner, int width, int height);

  std::size_t num_classes() const override { return inner_->num_classes(); }
  std::string name() const override { return inner_->name(); }
  int input_width() const override { return width_; }
  int input_height() const override { return height_; }
  bool supports_gradient() const override { return inner_->supports_gradient(); }
  Logits logits(const RgbImage& img) const override;
  std::vector<Vec3> logits_vjp(const RgbImage& img, const Eigen::VectorXd& cotangent) const override;

 private:
  OraclePtr inner_;
  int width_;
  int height_;
};

RgbImage resize_bilinear(const RgbImage& img, int width, int height);

// Transpose of resize_bilinear applied to a gradient at the output resolution.
std::vector<Vec3> resize_bilinear_transpose(std::span<const Vec3> grad_out, int out_width, int out_height,
                                            int in_width, int in_height);

// Wraps an oracle and hides its gradient, modelling a black-box target.
class BlackBoxOracle final : public ModelOracle {
 public:
  explicit BlackBoxOracle(OraclePtr inner) : inner_(std::move(inner)) {}

  std::size_t num_classes() const override { return inner_->num_classes(); }
  std::string name() const override { return inner_->name(); }
  int input_width() const override { return inner_->input_width(); }
  int input_height() const override { return inner_->input_height(); }
  Logits logits(const RgbImage& img) const override { return inner_->logits(img); }

 private:
  OraclePtr inner_;
};

}  // namespace ncf
