#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mtl/errors.hpp"
#include "mtl/rng.hpp"

namespace mtl {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

// One node of the backward graph. Nodes are created in forward order, so a
// node's parents always exist before it does; Tape::build exploits this to
// produce a topological order.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return values.size(); }
  void ensure_grad() {
    if (requires_grad && grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

bool grad_enabled();

}  // namespace detail

// RAII guard that disables graph recording; forward math still runs but the
// results are plain constants. Used for inference and metric evaluation.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense 64-bit float tensor with an optional gradient slot. Value-semantic
// handle onto a shared graph node; ops never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Xavier-style uniform init over fan_in + fan_out; rank-2 shapes only.
  static Tensor xavier_uniform(Shape shape, Rng& rng, bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;  // rank-2 helpers
  std::size_t cols() const;
  bool requires_grad() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  double item() const;  // numel()==1
  double at(std::size_t r, std::size_t c) const;

  void zero_grad();
  bool all_finite() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// The recorded forward pass in topological order (every node's parents
// precede it). Built on demand from a root; replaying it in reverse visits
// each node exactly once.
struct Tape {
  std::vector<std::shared_ptr<detail::TensorNode>> order;
  static Tape build(const Tensor& root);
};

// Reverse-mode sweep from a scalar loss. Every requires_grad tensor reachable
// from the loss receives accumulated (summed) gradients; everything else is
// untouched. Throws ContractError if the loss is not scalar.
void backward(const Tensor& loss);

// ---- operator set ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
// Stable softmax / log-softmax along `axis` (rank-1: axis 0; rank-2: 0 or 1).
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Same values, no history: gradients never flow into `a` or its ancestors.
Tensor detach(const Tensor& a);
// Inverted dropout: zero with probability `rate`, scale survivors by
// 1/(1-rate) when training; identity at inference. rate in [0,1).
Tensor dropout(const Tensor& a, double rate, bool training, Rng& rng);
// Row-wise normalization to zero mean / unit variance followed by gain*x+bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor transpose(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
// out[i] = a[i, index[i]] for a rank-2 `a`; used to pick per-row log-probs.
Tensor take_per_row(const Tensor& a, const std::vector<std::size_t>& index);
// Elementwise binary cross-entropy on logits, computed in the stable form
// max(z,0) - z*y + log1p(exp(-|z|)). `targets` is treated as constant data.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace mtl
