#include "mvpose/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace mvpose::diff {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

long shape_size(const std::vector<int>& shape) {
  long n = 1;
  for (int extent : shape) n *= extent;
  return n;
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::shared_ptr<Tensor::Node> make_node(std::vector<int> shape) {
  auto node = std::make_shared<Tensor::Node>();
  node->shape = std::move(shape);
  node->values.assign(shape_size(node->shape), 0.0);
  return node;
}

// Links an op output to its inputs. Drops tape links entirely when no input
// tracks gradients, so pure inference graphs free themselves eagerly.
Tensor make_op(std::vector<int> shape, std::vector<Tensor> inputs,
               std::function<void(Tensor::Node&)> backprop) {
  auto node = make_node(std::move(shape));
  bool tracked = false;
  for (const Tensor& input : inputs) {
    tracked = tracked || input.requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& input : inputs) {
      node->parents.push_back(input.node());
    }
    node->backprop = std::move(backprop);
  }
  return Tensor::wrap(node);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": operand shapes differ");
  }
}

}  // namespace

Tensor Tensor::wrap(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto node = make_node(std::move(shape));
  node->requires_grad = requires_grad;
  return wrap(node);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values,
                         bool requires_grad) {
  if (shape_size(shape) != static_cast<long>(values.size())) {
    throw ShapeMismatch("from_data: value count does not match shape");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return wrap(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeMismatch("item: tensor is not a scalar");
  }
  return node_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.size() != node_->values.size()) {
    throw Error("grad: no gradient has been accumulated");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

void Tensor::fill_uniform(std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : node_->values) {
    v = dist(rng);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeMismatch("backward: loss must be a defined scalar");
  }
  auto root = loss.node();
  if (root->backward_ran) {
    throw BackwardTwice("backward already ran on this graph; reset first");
  }
  root->backward_ran = true;
  if (!root->requires_grad) {
    return;  // nothing tracked
  }

  // iterative post-order over the tape
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> visited;
  struct Frame {
    Tensor::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& frame = stack.back();
    if (frame.next_parent < frame.node->parents.size()) {
      Tensor::Node* parent = frame.node->parents[frame.next_parent].get();
      ++frame.next_parent;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(frame.node);
      stack.pop_back();
    }
  }

  for (Tensor::Node* node : order) {
    node->ensure_grad();
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* node = *it;
    if (node->backprop) {
      node->backprop(*node);
    }
  }
}

void reset_backward_guard(const Tensor& loss) {
  if (!loss.defined()) {
    return;
  }
  // clear the guard plus every interior gradient buffer; leaf (parameter)
  // gradients keep accumulating until zero_grad
  loss.node()->backward_ran = false;
  std::vector<Tensor::Node*> stack{loss.node().get()};
  std::unordered_set<Tensor::Node*> visited{loss.node().get()};
  while (!stack.empty()) {
    Tensor::Node* node = stack.back();
    stack.pop_back();
    if (!node->parents.empty()) {
      std::fill(node->grad.begin(), node->grad.end(), 0.0);
    }
    for (const auto& parent : node->parents) {
      if (visited.insert(parent.get()).second) {
        stack.push_back(parent.get());
      }
    }
  }
}

// ---- elementwise ----

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd&& fwd, Bwd&& bwd) {
  Tensor out = make_op(
      x.shape(), {x},
      [x_node = x.node(), bwd](Tensor::Node& self) {
        if (!x_node->requires_grad) return;
        x_node->ensure_grad();
        for (long i = 0; i < self.size(); ++i) {
          x_node->grad[i] += self.grad[i] * bwd(x_node->values[i], self.values[i]);
        }
      });
  for (long i = 0; i < x.size(); ++i) {
    out.data()[i] = fwd(x.data()[i]);
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_op(a.shape(), {a, b},
                       [an = a.node(), bn = b.node()](Tensor::Node& self) {
                         for (auto* p : {an.get(), bn.get()}) {
                           if (!p->requires_grad) continue;
                           p->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             p->grad[i] += self.grad[i];
                           }
                         }
                       });
  for (long i = 0; i < a.size(); ++i) {
    out.data()[i] = a.data()[i] + b.data()[i];
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_op(a.shape(), {a, b},
                       [an = a.node(), bn = b.node()](Tensor::Node& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             an->grad[i] += self.grad[i];
                           }
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             bn->grad[i] -= self.grad[i];
                           }
                         }
                       });
  for (long i = 0; i < a.size(); ++i) {
    out.data()[i] = a.data()[i] - b.data()[i];
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_op(a.shape(), {a, b},
                       [an = a.node(), bn = b.node()](Tensor::Node& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             an->grad[i] += self.grad[i] * bn->values[i];
                           }
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             bn->grad[i] += self.grad[i] * an->values[i];
                           }
                         }
                       });
  for (long i = 0; i < a.size(); ++i) {
    out.data()[i] = a.data()[i] * b.data()[i];
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out = make_op(a.shape(), {a, b},
                       [an = a.node(), bn = b.node()](Tensor::Node& self) {
                         if (an->requires_grad) {
                           an->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             an->grad[i] += self.grad[i] / bn->values[i];
                           }
                         }
                         if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             bn->grad[i] -= self.grad[i] * an->values[i] /
                                            (bn->values[i] * bn->values[i]);
                           }
                         }
                       });
  for (long i = 0; i < a.size(); ++i) {
    out.data()[i] = a.data()[i] / b.data()[i];
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      a, [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_op(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  // clamped away from the exact endpoints so outputs stay in the open (0,1)
  // even when exp() underflows
  static constexpr double kLo = std::numeric_limits<double>::min();
  static constexpr double kHi = 1.0 - std::numeric_limits<double>::epsilon();
  return unary_op(
      x,
      [](double v) { return std::clamp(stable_sigmoid(v), kLo, kHi); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs_val(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor soft_depth_floor(const Tensor& z, double floor, double sharpness) {
  const double s = sharpness;
  return unary_op(
      z,
      [floor, s](double v) { return floor + s * stable_softplus((v - floor) / s); },
      [floor, s](double v, double) { return stable_sigmoid((v - floor) / s); });
}

Tensor barrier_below(const Tensor& z, double margin, double sharpness) {
  const double s = sharpness;
  return unary_op(
      z,
      [margin, s](double v) { return s * stable_softplus((margin - v) / s); },
      [margin, s](double v, double) { return -stable_sigmoid((margin - v) / s); });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: inner dimensions differ");
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_op(
      {m, n}, {a, b}, [an = a.node(), bn = b.node(), m, k, n](Tensor::Node& self) {
        ConstMatMap grad_out(self.grad.data(), m, n);
        ConstMatMap av(an->values.data(), m, k);
        ConstMatMap bv(bn->values.data(), k, n);
        if (an->requires_grad) {
          an->ensure_grad();
          MatMap(an->grad.data(), m, k).noalias() += grad_out * bv.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          MatMap(bn->grad.data(), k, n).noalias() += av.transpose() * grad_out;
        }
      });
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.data(), m, k) * ConstMatMap(b.data(), k, n);
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const int batch = x.rows(), in = x.cols();
  const int out_dim = weight.rows();
  if (weight.cols() != in) {
    throw ShapeMismatch("linear: weight width does not match input");
  }
  if (bias.size() != out_dim) {
    throw ShapeMismatch("linear: bias length does not match output");
  }
  Tensor out = make_op(
      {batch, out_dim}, {x, weight, bias},
      [xn = x.node(), wn = weight.node(), bn = bias.node(), batch, in,
       out_dim](Tensor::Node& self) {
        ConstMatMap grad_out(self.grad.data(), batch, out_dim);
        ConstMatMap xv(xn->values.data(), batch, in);
        ConstMatMap wv(wn->values.data(), out_dim, in);
        if (xn->requires_grad) {
          xn->ensure_grad();
          MatMap(xn->grad.data(), batch, in).noalias() += grad_out * wv;
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          MatMap(wn->grad.data(), out_dim, in).noalias() +=
              grad_out.transpose() * xv;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          Eigen::Map<Eigen::VectorXd>(bn->grad.data(), out_dim).noalias() +=
              grad_out.colwise().sum().transpose();
        }
      });
  MatMap result(out.data(), batch, out_dim);
  result.noalias() = ConstMatMap(x.data(), batch, in) *
                     ConstMatMap(weight.data(), out_dim, in).transpose();
  result.rowwise() +=
      Eigen::Map<const Eigen::VectorXd>(bias.data(), out_dim).transpose();
  return out;
}

// ---- structure ----

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeMismatch("reshape: element count mismatch");
  }
  Tensor out = make_op(std::move(shape), {x}, [xn = x.node()](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (long i = 0; i < self.size(); ++i) {
      xn->grad[i] += self.grad[i];
    }
  });
  std::copy(x.data(), x.data() + x.size(), out.data());
  return out;
}

Tensor reduce_sum(const Tensor& x) {
  Tensor out = make_op({1}, {x}, [xn = x.node()](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (long i = 0; i < xn->size(); ++i) {
      xn->grad[i] += self.grad[0];
    }
  });
  double sum = 0.0;
  for (long i = 0; i < x.size(); ++i) sum += x.data()[i];
  out.data()[0] = sum;
  return out;
}

Tensor reduce_mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor out = make_op({1}, {x}, [xn = x.node(), inv](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (long i = 0; i < xn->size(); ++i) {
      xn->grad[i] += self.grad[0] * inv;
    }
  });
  double sum = 0.0;
  for (long i = 0; i < x.size(); ++i) sum += x.data()[i];
  out.data()[0] = sum * inv;
  return out;
}

Tensor add_n(const std::vector<Tensor>& terms) {
  if (terms.empty()) {
    throw ShapeMismatch("add_n: need at least one term");
  }
  for (const Tensor& t : terms) {
    check_same_shape(terms.front(), t, "add_n");
  }
  std::vector<std::shared_ptr<Tensor::Node>> nodes;
  nodes.reserve(terms.size());
  for (const Tensor& t : terms) nodes.push_back(t.node());
  Tensor out = make_op(terms.front().shape(), terms,
                       [nodes](Tensor::Node& self) {
                         for (const auto& p : nodes) {
                           if (!p->requires_grad) continue;
                           p->ensure_grad();
                           for (long i = 0; i < self.size(); ++i) {
                             p->grad[i] += self.grad[i];
                           }
                         }
                       });
  for (const Tensor& t : terms) {
    for (long i = 0; i < t.size(); ++i) {
      out.data()[i] += t.data()[i];
    }
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw ShapeMismatch("concat_cols: need at least one part");
  }
  const int rows = parts.front().rows();
  int total_cols = 0;
  for (const Tensor& part : parts) {
    if (part.rows() != rows) {
      throw ShapeMismatch("concat_cols: row counts differ");
    }
    total_cols += part.cols();
  }
  std::vector<std::shared_ptr<Tensor::Node>> nodes;
  std::vector<int> widths;
  for (const Tensor& part : parts) {
    nodes.push_back(part.node());
    widths.push_back(part.cols());
  }
  Tensor out = make_op(
      {rows, total_cols}, parts,
      [nodes, widths, rows, total_cols](Tensor::Node& self) {
        int col0 = 0;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
          const int w = widths[p];
          if (nodes[p]->requires_grad) {
            nodes[p]->ensure_grad();
            for (int r = 0; r < rows; ++r) {
              for (int c = 0; c < w; ++c) {
                nodes[p]->grad[r * w + c] +=
                    self.grad[r * total_cols + col0 + c];
              }
            }
          }
          col0 += w;
        }
      });
  int col0 = 0;
  for (const Tensor& part : parts) {
    const int w = part.cols();
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < w; ++c) {
        out.data()[r * total_cols + col0 + c] = part.data()[r * w + c];
      }
    }
    col0 += w;
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int count) {
  const int rows = x.rows(), cols = x.cols();
  if (start < 0 || count < 1 || start + count > cols) {
    throw ShapeMismatch("slice_cols: range out of bounds");
  }
  Tensor out = make_op({rows, count}, {x},
                       [xn = x.node(), start, count, rows, cols](Tensor::Node& self) {
                         if (!xn->requires_grad) return;
                         xn->ensure_grad();
                         for (int r = 0; r < rows; ++r) {
                           for (int c = 0; c < count; ++c) {
                             xn->grad[r * cols + start + c] += self.grad[r * count + c];
                           }
                         }
                       });
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < count; ++c) {
      out.data()[r * count + c] = x.data()[r * cols + start + c];
    }
  }
  return out;
}

Tensor row_gather(const Tensor& x, std::vector<int> rows) {
  const int cols = x.cols();
  const int n = static_cast<int>(rows.size());
  for (int r : rows) {
    if (r < 0 || r >= x.rows()) {
      throw ShapeMismatch("row_gather: index out of range");
    }
  }
  Tensor out = make_op({n, cols}, {x},
                       [xn = x.node(), rows, cols, n](Tensor::Node& self) {
                         if (!xn->requires_grad) return;
                         xn->ensure_grad();
                         for (int r = 0; r < n; ++r) {
                           const int src = rows[r];
                           for (int c = 0; c < cols; ++c) {
                             xn->grad[src * cols + c] += self.grad[r * cols + c];
                           }
                         }
                       });
  for (int r = 0; r < n; ++r) {
    const int src = rows[r];
    for (int c = 0; c < cols; ++c) {
      out.data()[r * cols + c] = x.data()[src * cols + c];
    }
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& factors) {
  const int rows = x.rows(), cols = x.cols();
  if (factors.size() != rows) {
    throw ShapeMismatch("scale_rows: factor count does not match rows");
  }
  Tensor out = make_op(
      {rows, cols}, {x, factors},
      [xn = x.node(), fn = factors.node(), rows, cols](Tensor::Node& self) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
              xn->grad[r * cols + c] += self.grad[r * cols + c] * fn->values[r];
            }
          }
        }
        if (fn->requires_grad) {
          fn->ensure_grad();
          for (int r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (int c = 0; c < cols; ++c) {
              acc += self.grad[r * cols + c] * xn->values[r * cols + c];
            }
            fn->grad[r] += acc;
          }
        }
      });
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out.data()[r * cols + c] = x.data()[r * cols + c] * factors.data()[r];
    }
  }
  return out;
}

// ---- segmented ----

namespace {

void check_offsets(const std::vector<int>& offsets, int total, const char* op) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != total) {
    throw ShapeMismatch(std::string(op) + ": malformed segment offsets");
  }
  for (std::size_t i = 1; i < offsets.size(); ++i) {
    if (offsets[i] < offsets[i - 1]) {
      throw ShapeMismatch(std::string(op) + ": offsets must be non-decreasing");
    }
  }
}

}  // namespace

Tensor segment_softmax(const Tensor& x, const std::vector<int>& offsets) {
  if (x.cols() != 1) {
    throw ShapeMismatch("segment_softmax: expected a column tensor");
  }
  check_offsets(offsets, x.rows(), "segment_softmax");
  Tensor out = make_op(
      x.shape(), {x}, [xn = x.node(), offsets](Tensor::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
          double dot = 0.0;
          for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
            dot += self.grad[i] * self.values[i];
          }
          for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
            xn->grad[i] += self.values[i] * (self.grad[i] - dot);
          }
        }
      });
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const int begin = offsets[s], end = offsets[s + 1];
    if (begin == end) continue;
    double max_val = x.data()[begin];
    for (int i = begin + 1; i < end; ++i) {
      max_val = std::max(max_val, x.data()[i]);
    }
    double denom = 0.0;
    for (int i = begin; i < end; ++i) {
      out.data()[i] = std::exp(x.data()[i] - max_val);
      denom += out.data()[i];
    }
    for (int i = begin; i < end; ++i) {
      out.data()[i] /= denom;
    }
  }
  return out;
}

Tensor segment_sum_rows(const Tensor& x, const std::vector<int>& offsets) {
  check_offsets(offsets, x.rows(), "segment_sum_rows");
  const int cols = x.cols();
  const int segments = static_cast<int>(offsets.size()) - 1;
  Tensor out = make_op(
      {segments, cols}, {x},
      [xn = x.node(), offsets, cols](Tensor::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
          for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
            for (int c = 0; c < cols; ++c) {
              xn->grad[i * cols + c] += self.grad[s * cols + c];
            }
          }
        }
      });
  for (int s = 0; s < segments; ++s) {
    for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
      for (int c = 0; c < cols; ++c) {
        out.data()[s * cols + c] += x.data()[i * cols + c];
      }
    }
  }
  return out;
}

Tensor bce_with_logits_mean(const Tensor& logits,
                            const std::vector<double>& targets) {
  if (static_cast<long>(targets.size()) != logits.size()) {
    throw ShapeMismatch("bce_with_logits_mean: target count mismatch");
  }
  const long n = logits.size();
  const double inv = 1.0 / static_cast<double>(n);
  Tensor out = make_op(
      {1}, {logits}, [ln = logits.node(), targets, inv](Tensor::Node& self) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        for (std::size_t i = 0; i < targets.size(); ++i) {
          ln->grad[i] +=
              self.grad[0] * inv * (stable_sigmoid(ln->values[i]) - targets[i]);
        }
      });
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    const double z = logits.data()[i];
    loss += stable_softplus(z) - targets[i] * z;
  }
  out.data()[0] = loss * inv;
  return out;
}

// ---- optimizer ----

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  first_moment_.reserve(params_.size());
  second_moment_.reserve(params_.size());
  for (const Tensor& p : params_) {
    first_moment_.emplace_back(p.size(), 0.0);
    second_moment_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++step_;
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& param = params_[p];
    param.node()->ensure_grad();
    const std::vector<double>& g = param.node()->grad;
    std::vector<double>& m = first_moment_[p];
    std::vector<double>& v = second_moment_[p];
    double* values = param.data();
    for (long i = 0; i < param.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      values[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& param : params_) {
    param.zero_grad();
  }
}

}  // namespace mvpose::diff
