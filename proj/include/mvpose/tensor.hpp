#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "mvpose/errors.hpp"

namespace mvpose::diff {

// A dense 64-bit tensor participating in a dynamically built reverse-mode
// tape. Copies share the underlying node, torch-style. Tensors are 1-D or
// 2-D; scalars have shape {1}.
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same length as values
    bool requires_grad = false;
    bool backward_ran = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    long size() const { return static_cast<long>(values.size()); }
    void ensure_grad() {
      if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
  };

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rows() const { return node_->shape[0]; }
  int cols() const {
    return node_->shape.size() > 1 ? node_->shape[1] : 1;
  }
  long size() const { return node_->size(); }

  double* data() { return node_->values.data(); }
  const double* data() const { return node_->values.data(); }
  const std::vector<double>& values() const { return node_->values; }
  double item() const;
  double at(int r, int c) const { return node_->values[r * cols() + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Fill with U(-bound, bound); used for parameter initialisation.
  void fill_uniform(std::mt19937_64& rng, double bound);

  std::shared_ptr<Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Throws BackwardTwice if
// called again on the same loss without reset_backward_guard.
void backward(const Tensor& loss);
void reset_backward_guard(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor abs_val(const Tensor& x);  // subgradient 0 at the kink
Tensor square(const Tensor& x);

// z + s*log1p(exp(-(z - floor)/s)): identity for depths comfortably above
// `floor`, smoothly clamped to `floor` below it.
Tensor soft_depth_floor(const Tensor& z, double floor, double sharpness);
// s*softplus((margin - z)/s): zero away from the margin, grows as z sinks.
Tensor barrier_below(const Tensor& z, double margin, double sharpness);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
// x [B,in] * W^T [out,in] + b [out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- structure ----
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);
Tensor add_n(const std::vector<Tensor>& terms);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int start, int count);
Tensor row_gather(const Tensor& x, std::vector<int> rows);
Tensor scale_rows(const Tensor& x, const Tensor& factors);

// ---- segmented ops over CSR-style offsets ----
Tensor segment_softmax(const Tensor& x, const std::vector<int>& offsets);
Tensor segment_sum_rows(const Tensor& x, const std::vector<int>& offsets);

// Numerically stable mean binary cross entropy on logits.
Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets);

// ---- optimizer ----
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected adaptive-moment update over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void step();
  void zero_grad();
  long step_count() const { return step_; }
  AdamConfig& config() { return config_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  long step_ = 0;
};

}  // namespace mvpose::diff
