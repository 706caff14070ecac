#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

inline constexpr std::size_t kExpressionClasses = 8;
inline constexpr std::size_t kActionUnits = 12;

enum class Task { V, A, EXPR, AU };

const char* task_name(Task t);
Task task_from_name(const std::string& name);
std::size_t task_output_dim(Task t);  // V:1 A:1 EXPR:8 AU:12

// Per-frame labels with per-task (and per-AU) validity masks. A frame may
// carry any subset of the four annotations; masked-off values are zeroed so
// sentinels never reach a loss or metric.
struct LabelBatch {
  std::vector<double> valence, arousal;
  std::vector<std::uint8_t> valence_mask, arousal_mask;
  std::vector<int> expression;
  std::vector<std::uint8_t> expression_mask;
  std::vector<std::array<std::uint8_t, kActionUnits>> au;
  std::vector<std::array<std::uint8_t, kActionUnits>> au_mask;

  std::size_t frames() const { return valence.size(); }
  void resize(std::size_t n);
  // Appends rows [begin, end) of `other`.
  void append(const LabelBatch& other, std::size_t begin, std::size_t end);
  LabelBatch slice(std::size_t begin, std::size_t end) const;
  std::size_t count(Task t) const;  // unmasked frames (AU: unmasked pairs)
};

// Per-task loss weights (alpha). All-zero weights are legal but degenerate;
// model building warns about them.
struct LossWeights {
  double v = 1.0, a = 1.0, expr = 1.0, au = 1.0;
  double of(Task t) const;
  double& of(Task t);
  bool all_zero(const std::vector<Task>& tasks) const;
};

// Scalar loss over the unmasked subset. `count` is the number of unmasked
// frames (or (frame, AU) pairs for BCE); when it is zero the value is an
// exact zero constant and `empty()` reports the degenerate batch.
struct MaskedLoss {
  Tensor value;
  std::size_t count = 0;
  bool empty() const { return count == 0; }
};

// Mean squared error over unmasked frames. pred is [N x 1].
MaskedLoss mse_loss(const Tensor& pred, const std::vector<double>& labels,
                    const std::vector<std::uint8_t>& mask);

// Mean cross entropy -log softmax(logits)[label] over unmasked frames.
// logits is [N x 8]; labels in {0..7} where unmasked.
MaskedLoss ce_loss(const Tensor& logits, const std::vector<int>& labels,
                   const std::vector<std::uint8_t>& mask);

// Mean stable binary cross entropy over unmasked (frame, AU) pairs.
// logits is [N x 12]; each AU may be missing independently.
MaskedLoss bce_loss(const Tensor& logits,
                    const std::vector<std::array<std::uint8_t, kActionUnits>>& labels,
                    const std::vector<std::array<std::uint8_t, kActionUnits>>& mask);

// Weighted sum over the configured task set. Every task in `task_set` must
// have an entry in `losses` (ConfigError otherwise).
Tensor multi_task_loss(const std::map<Task, MaskedLoss>& losses,
                       const LossWeights& weights, const std::vector<Task>& task_set);

}  // namespace mtl
