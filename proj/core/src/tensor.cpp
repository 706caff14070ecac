#include "mtl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mtl {

namespace {

thread_local bool g_grad_enabled = true;

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

NodePtr make_node(Shape shape, const char* op, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values.assign(shape_numel(node->shape), 0.0);
  node->op = op;
  node->requires_grad = requires_grad && g_grad_enabled;
  return node;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got shape " +
                         shape_str(t.shape()));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// Broadcast classification for binary elementwise ops: identical shapes, or
// `b` a rank-1 vector matching a's trailing dimension.
enum class Broadcast { kSame, kTrailingVector };

Broadcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.rank() == 1 && !a.shape().empty() && b.shape()[0] == a.shape().back())
    return Broadcast::kTrailingVector;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " are not broadcastable");
}

}  // namespace

namespace detail {
bool grad_enabled() { return g_grad_enabled; }
}  // namespace detail

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- Tensor handle ----

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values.assign(shape_numel(node->shape), 0.0);
  node->requires_grad = requires_grad;
  node->ensure_grad();
  return wrap(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  Tensor t = zeros(std::move(shape), requires_grad);
  t.values() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::xavier_uniform(Shape shape, Rng& rng, bool requires_grad) {
  if (shape.size() != 2)
    throw DimensionError("xavier_uniform expects a rank-2 shape, got " + shape_str(shape));
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = static_cast<double>(shape[1]);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape()[1];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::vector<double>& Tensor::values() {
  if (!node_) throw ContractError("values() on undefined tensor");
  return node_->values;
}

const std::vector<double>& Tensor::values() const {
  if (!node_) throw ContractError("values() on undefined tensor");
  return node_->values;
}

std::vector<double>& Tensor::grad() {
  if (!requires_grad())
    throw ContractError("grad() on a tensor without requires_grad");
  node_->ensure_grad();
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad())
    throw ContractError("grad() on a tensor without requires_grad");
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return values()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2(*this, "at");
  return values()[r * cols() + c];
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(grad().begin(), grad().end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : values())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- tape and backward ----

Tape Tape::build(const Tensor& root) {
  require_defined(root, "Tape::build");
  Tape tape;
  std::unordered_set<TensorNode*> visited;
  // Iterative post-order DFS; parents are emitted before the node itself.
  struct Frame {
    NodePtr node;
    std::size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node()});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    Frame& frame = stack.back();
    if (frame.next_parent < frame.node->parents.size()) {
      NodePtr parent = frame.node->parents[frame.next_parent++];
      if (visited.insert(parent.get()).second) stack.push_back({std::move(parent)});
    } else {
      tape.order.push_back(frame.node);
      stack.pop_back();
    }
  }
  return tape;
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad()) return;  // nothing reachable requires gradients
  Tape tape = Tape::build(loss);
  for (const auto& node : tape.order) node->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    TensorNode& node = **it;
    if (node.requires_grad && node.backward_fn) node.backward_fn(node);
  }
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  NodePtr out = make_node({m, n}, "matmul", a.requires_grad() || b.requires_grad());
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out->values.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = bv + p * n;
        double* orow = ov + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backward_fn = [m, k, n](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      const NodePtr& pb = node.parents[1];
      const double* g = node.grad.data();
      if (pa->requires_grad) {
        pa->ensure_grad();
        // dA = G * B^T
        const double* bv = pb->values.data();
        double* da = pa->grad.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double* grow = g + i * n;
            const double* brow = bv + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            da[i * k + p] += acc;
          }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        // dB = A^T * G
        const double* av = pa->values.data();
        double* db = pb->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            double* dbrow = db + p * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * grow[j];
          }
        }
      }
    };
  }
  return Tensor::wrap(out);
}

namespace {

enum class BinKind { kAdd, kSub, kMul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const Broadcast bc = classify_broadcast(a, b, name);
  NodePtr out = make_node(a.shape(), name, a.requires_grad() || b.requires_grad());
  const std::size_t n = a.numel();
  const std::size_t stride = bc == Broadcast::kSame ? n : b.numel();
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double bx = bv[i % stride];
    switch (kind) {
      case BinKind::kAdd: ov[i] = av[i] + bx; break;
      case BinKind::kSub: ov[i] = av[i] - bx; break;
      case BinKind::kMul: ov[i] = av[i] * bx; break;
    }
  }
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backward_fn = [kind, stride, n](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      const NodePtr& pb = node.parents[1];
      const double* g = node.grad.data();
      if (pa->requires_grad) {
        pa->ensure_grad();
        double* da = pa->grad.data();
        const double* bv2 = pb->values.data();
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case BinKind::kAdd:
            case BinKind::kSub: da[i] += g[i]; break;
            case BinKind::kMul: da[i] += g[i] * bv2[i % stride]; break;
          }
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        double* db = pb->grad.data();
        const double* av2 = pa->values.data();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = i % stride;
          switch (kind) {
            case BinKind::kAdd: db[j] += g[i]; break;
            case BinKind::kSub: db[j] -= g[i]; break;
            case BinKind::kMul: db[j] += g[i] * av2[i]; break;
          }
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor unary_op(const Tensor& a, const char* name, double (*fwd)(double),
                double (*dfd)(double /*x*/, double /*y*/)) {
  require_defined(a, name);
  NodePtr out = make_node(a.shape(), name, a.requires_grad());
  const std::size_t n = a.numel();
  const double* av = a.values().data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(av[i]);
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward_fn = [dfd, n](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double* g = node.grad.data();
      const double* x = pa->values.data();
      const double* y = node.values.data();
      double* da = pa->grad.data();
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * dfd(x[i], y[i]);
    };
  }
  return Tensor::wrap(out);
}

double sigmoid_fwd(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kMul, "mul"); }

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid", &sigmoid_fwd,
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(a, "tanh", +[](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", +[](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {

// Iterates the rows/columns selected by `axis` as (count, len, stride, base-stride)
// so softmax variants share one traversal.
struct AxisView {
  std::size_t groups, len, step, group_step;
};

AxisView axis_view(const Tensor& a, std::size_t axis, const char* op) {
  if (a.rank() == 1) {
    if (axis != 0)
      throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                           " invalid for shape " + shape_str(a.shape()));
    return {1, a.shape()[0], 1, 0};
  }
  if (a.rank() == 2) {
    if (axis == 1) return {a.shape()[0], a.shape()[1], 1, a.shape()[1]};
    if (axis == 0) return {a.shape()[1], a.shape()[0], a.shape()[1], 1};
  }
  throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                       " invalid for shape " + shape_str(a.shape()));
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  require_defined(a, "softmax");
  const AxisView view = axis_view(a, axis, "softmax");
  NodePtr out = make_node(a.shape(), "softmax", a.requires_grad());
  const double* av = a.values().data();
  double* ov = out->values.data();
  for (std::size_t gidx = 0; gidx < view.groups; ++gidx) {
    const std::size_t base = gidx * view.group_step;
    double maxv = av[base];
    for (std::size_t i = 1; i < view.len; ++i)
      maxv = std::max(maxv, av[base + i * view.step]);
    double total = 0.0;
    for (std::size_t i = 0; i < view.len; ++i) {
      const double e = std::exp(av[base + i * view.step] - maxv);
      ov[base + i * view.step] = e;
      total += e;
    }
    for (std::size_t i = 0; i < view.len; ++i) ov[base + i * view.step] /= total;
  }
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward_fn = [view](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double* g = node.grad.data();
      const double* s = node.values.data();
      double* da = pa->grad.data();
      for (std::size_t gidx = 0; gidx < view.groups; ++gidx) {
        const std::size_t base = gidx * view.group_step;
        double dot = 0.0;
        for (std::size_t i = 0; i < view.len; ++i) {
          const std::size_t idx = base + i * view.step;
          dot += g[idx] * s[idx];
        }
        for (std::size_t i = 0; i < view.len; ++i) {
          const std::size_t idx = base + i * view.step;
          da[idx] += s[idx] * (g[idx] - dot);
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  require_defined(a, "log_softmax");
  const AxisView view = axis_view(a, axis, "log_softmax");
  NodePtr out = make_node(a.shape(), "log_softmax", a.requires_grad());
  const double* av = a.values().data();
  double* ov = out->values.data();
  for (std::size_t gidx = 0; gidx < view.groups; ++gidx) {
    const std::size_t base = gidx * view.group_step;
    double maxv = av[base];
    for (std::size_t i = 1; i < view.len; ++i)
      maxv = std::max(maxv, av[base + i * view.step]);
    double total = 0.0;
    for (std::size_t i = 0; i < view.len; ++i)
      total += std::exp(av[base + i * view.step] - maxv);
    const double log_total = std::log(total) + maxv;
    for (std::size_t i = 0; i < view.len; ++i) {
      const std::size_t idx = base + i * view.step;
      ov[idx] = av[idx] - log_total;
    }
  }
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward_fn = [view](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double* g = node.grad.data();
      const double* l = node.values.data();
      double* da = pa->grad.data();
      for (std::size_t gidx = 0; gidx < view.groups; ++gidx) {
        const std::size_t base = gidx * view.group_step;
        double gsum = 0.0;
        for (std::size_t i = 0; i < view.len; ++i) gsum += g[base + i * view.step];
        for (std::size_t i = 0; i < view.len; ++i) {
          const std::size_t idx = base + i * view.step;
          da[idx] += g[idx] - std::exp(l[idx]) * gsum;
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: empty input list");
  for (const Tensor& p : parts) require_defined(p, "concat");
  const std::size_t rank = parts[0].rank();
  if (axis >= rank)
    throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
  Shape out_shape = parts[0].shape();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.size() != rank)
      throw DimensionError("concat: rank mismatch between inputs");
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis && s[d] != out_shape[d])
        throw DimensionError("concat: extent mismatch off the concat axis, " +
                             shape_str(parts[0].shape()) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }

  bool needs_grad = false;
  for (const Tensor& p : parts) needs_grad = needs_grad || p.requires_grad();
  NodePtr out = make_node(out_shape, "concat", needs_grad);

  // Copy strategy for rank<=2: axis==0 appends whole blocks; axis==1 stitches rows.
  if (rank == 1 || axis == 0) {
    double* dst = out->values.data();
    for (const Tensor& p : parts) {
      const auto& v = p.values();
      std::copy(v.begin(), v.end(), dst);
      dst += v.size();
    }
  } else if (rank == 2 && axis == 1) {
    const std::size_t rows = out_shape[0], out_cols = out_shape[1];
    std::size_t col_off = 0;
    for (const Tensor& p : parts) {
      const std::size_t pc = p.shape()[1];
      const double* src = p.values().data();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(src + r * pc, src + (r + 1) * pc,
                  out->values.data() + r * out_cols + col_off);
      col_off += pc;
    }
  } else {
    throw DimensionError("concat: only rank-1/rank-2 tensors are supported");
  }

  if (out->requires_grad) {
    std::vector<std::size_t> extents;
    extents.reserve(parts.size());
    for (const Tensor& p : parts) {
      extents.push_back(p.shape()[axis]);
      out->parents.push_back(p.node());
    }
    const Shape shape_copy = out_shape;
    out->backward_fn = [axis, extents, shape_copy, rank](TensorNode& node) {
      const double* g = node.grad.data();
      if (rank == 1 || axis == 0) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < node.parents.size(); ++pi) {
          const NodePtr& p = node.parents[pi];
          const std::size_t count = p->numel();
          if (p->requires_grad) {
            p->ensure_grad();
            for (std::size_t i = 0; i < count; ++i) p->grad[i] += g[off + i];
          }
          off += count;
        }
      } else {
        const std::size_t rows = shape_copy[0], out_cols = shape_copy[1];
        std::size_t col_off = 0;
        for (std::size_t pi = 0; pi < node.parents.size(); ++pi) {
          const NodePtr& p = node.parents[pi];
          const std::size_t pc = extents[pi];
          if (p->requires_grad) {
            p->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < pc; ++c)
                p->grad[r * pc + c] += g[r * out_cols + col_off + c];
          }
          col_off += pc;
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor detach(const Tensor& a) {
  require_defined(a, "detach");
  auto node = std::make_shared<TensorNode>();
  node->shape = a.shape();
  node->values = a.values();
  node->requires_grad = false;
  node->op = "detach";
  return Tensor::wrap(std::move(node));
}

Tensor dropout(const Tensor& a, double rate, bool training, Rng& rng) {
  require_defined(a, "dropout");
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const std::size_t n = a.numel();
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i)
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  NodePtr out = make_node(a.shape(), "dropout", a.requires_grad());
  const double* av = a.values().data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * (*mask)[i];
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward_fn = [mask, n](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double* g = node.grad.data();
      double* da = pa->grad.data();
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * (*mask)[i];
    };
  }
  return Tensor::wrap(out);
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(a, "layer_norm");
  require_rank2(a, "layer_norm");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (gain.rank() != 1 || gain.shape()[0] != cols || bias.rank() != 1 ||
      bias.shape()[0] != cols)
    throw DimensionError("layer_norm: gain/bias must be rank-1 of size " +
                         std::to_string(cols));
  const bool needs_grad =
      a.requires_grad() || gain.requires_grad() || bias.requires_grad();
  NodePtr out = make_node(a.shape(), "layer_norm", needs_grad);
  auto xhat = std::make_shared<std::vector<double>>(rows * cols);
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const double* av = a.values().data();
  const double* gv = gain.values().data();
  const double* bv = bias.values().data();
  double* ov = out->values.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = av + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = row[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (row[c] - mean) * rs;
      (*xhat)[r * cols + c] = xh;
      ov[r * cols + c] = gv[c] * xh + bv[c];
    }
  }
  if (out->requires_grad) {
    out->parents = {a.node(), gain.node(), bias.node()};
    out->backward_fn = [rows, cols, xhat, rstd](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      const NodePtr& pg = node.parents[1];
      const NodePtr& pb = node.parents[2];
      const double* g = node.grad.data();
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) pb->grad[c] += g[r * cols + c];
      }
      if (pg->requires_grad) {
        pg->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            pg->grad[c] += g[r * cols + c] * (*xhat)[r * cols + c];
      }
      if (pa->requires_grad) {
        pa->ensure_grad();
        const double* gv2 = pg->values.data();
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double gp = g[r * cols + c] * gv2[c];
            m1 += gp;
            m2 += gp * (*xhat)[r * cols + c];
          }
          m1 /= static_cast<double>(cols);
          m2 /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const double gp = g[r * cols + c] * gv2[c];
            pa->grad[r * cols + c] +=
                (gp - m1 - (*xhat)[r * cols + c] * m2) * (*rstd)[r];
          }
        }
      }
    };
  }
  return Tensor::wrap(out);
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  require_rank2(a, "transpose");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  NodePtr out = make_node({cols, rows}, "transpose", a.requires_grad());
  const double* av = a.values().data();
  double* ov = out->values.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) ov[c * rows + r] = av[r * cols + c];
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward_fn = [rows, cols](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double* g = node.grad.data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          pa->grad[r * cols + c] += g[c * rows + r];
    };
  }
  return Tensor::wrap(out);
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  NodePtr out = make_node({1}, "sum", a.requires_grad());
  double total = 0.0;
  for (double v : a.values()) total += v;
  out->values[0] = total;
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward_fn = [](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double g = node.grad[0];
      for (double& d : pa->grad) d += g;
    };
  }
  return Tensor::wrap(out);
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  NodePtr out = make_node(a.shape(), "scale", a.requires_grad());
  const std::size_t n = a.numel();
  const double* av = a.values().data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * factor;
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward_fn = [factor, n](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double* g = node.grad.data();
      for (std::size_t i = 0; i < n; ++i) pa->grad[i] += g[i] * factor;
    };
  }
  return Tensor::wrap(out);
}

Tensor take_per_row(const Tensor& a, const std::vector<std::size_t>& index) {
  require_defined(a, "take_per_row");
  require_rank2(a, "take_per_row");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (index.size() != rows)
    throw DimensionError("take_per_row: index count " + std::to_string(index.size()) +
                         " != row count " + std::to_string(rows));
  for (std::size_t i : index)
    if (i >= cols)
      throw DimensionError("take_per_row: index " + std::to_string(i) +
                           " out of range for " + std::to_string(cols) + " columns");
  NodePtr out = make_node({rows, 1}, "take_per_row", a.requires_grad());
  const double* av = a.values().data();
  for (std::size_t r = 0; r < rows; ++r) out->values[r] = av[r * cols + index[r]];
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto idx = std::make_shared<std::vector<std::size_t>>(index);
    out->backward_fn = [idx, rows, cols](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        pa->grad[r * cols + (*idx)[r]] += node.grad[r];
    };
  }
  return Tensor::wrap(out);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_defined(logits, "bce_with_logits");
  require_defined(targets, "bce_with_logits");
  if (logits.shape() != targets.shape())
    throw DimensionError("bce_with_logits: shapes " + shape_str(logits.shape()) +
                         " and " + shape_str(targets.shape()) + " differ");
  const std::size_t n = logits.numel();
  NodePtr out = make_node(logits.shape(), "bce_with_logits", logits.requires_grad());
  auto target_copy = std::make_shared<std::vector<double>>(targets.values());
  const double* z = logits.values().data();
  const double* y = target_copy->data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i)
    ov[i] = std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  if (out->requires_grad) {
    out->parents = {logits.node()};
    out->backward_fn = [target_copy, n](TensorNode& node) {
      const NodePtr& pa = node.parents[0];
      pa->ensure_grad();
      const double* g = node.grad.data();
      const double* z2 = pa->values.data();
      const double* y2 = target_copy->data();
      for (std::size_t i = 0; i < n; ++i)
        pa->grad[i] += g[i] * (sigmoid_fwd(z2[i]) - y2[i]);
    };
  }
  return Tensor::wrap(out);
}

}  // namespace mtl
