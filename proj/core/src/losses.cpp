#include "mtl/losses.hpp"

#include <algorithm>

namespace mtl {

const char* task_name(Task t) {
  switch (t) {
    case Task::V: return "V";
    case Task::A: return "A";
    case Task::EXPR: return "EXPR";
    case Task::AU: return "AU";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "V" || name == "v") return Task::V;
  if (name == "A" || name == "a") return Task::A;
  if (name == "EXPR" || name == "expr") return Task::EXPR;
  if (name == "AU" || name == "au") return Task::AU;
  throw ConfigError("unknown task name: " + name);
}

std::size_t task_output_dim(Task t) {
  switch (t) {
    case Task::V:
    case Task::A: return 1;
    case Task::EXPR: return kExpressionClasses;
    case Task::AU: return kActionUnits;
  }
  return 0;
}

void LabelBatch::resize(std::size_t n) {
  valence.assign(n, 0.0);
  arousal.assign(n, 0.0);
  valence_mask.assign(n, 0);
  arousal_mask.assign(n, 0);
  expression.assign(n, 0);
  expression_mask.assign(n, 0);
  au.assign(n, {});
  au_mask.assign(n, {});
}

void LabelBatch::append(const LabelBatch& other, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    valence.push_back(other.valence[i]);
    arousal.push_back(other.arousal[i]);
    valence_mask.push_back(other.valence_mask[i]);
    arousal_mask.push_back(other.arousal_mask[i]);
    expression.push_back(other.expression[i]);
    expression_mask.push_back(other.expression_mask[i]);
    au.push_back(other.au[i]);
    au_mask.push_back(other.au_mask[i]);
  }
}

LabelBatch LabelBatch::slice(std::size_t begin, std::size_t end) const {
  LabelBatch out;
  out.append(*this, begin, end);
  return out;
}

std::size_t LabelBatch::count(Task t) const {
  std::size_t n = 0;
  switch (t) {
    case Task::V:
      for (auto m : valence_mask) n += m != 0;
      break;
    case Task::A:
      for (auto m : arousal_mask) n += m != 0;
      break;
    case Task::EXPR:
      for (auto m : expression_mask) n += m != 0;
      break;
    case Task::AU:
      for (const auto& row : au_mask)
        for (auto m : row) n += m != 0;
      break;
  }
  return n;
}

double LossWeights::of(Task t) const {
  switch (t) {
    case Task::V: return v;
    case Task::A: return a;
    case Task::EXPR: return expr;
    case Task::AU: return au;
  }
  return 0.0;
}

double& LossWeights::of(Task t) {
  switch (t) {
    case Task::V: return v;
    case Task::A: return a;
    case Task::EXPR: return expr;
    default: return au;
  }
}

bool LossWeights::all_zero(const std::vector<Task>& tasks) const {
  for (Task t : tasks)
    if (of(t) != 0.0) return false;
  return true;
}

MaskedLoss mse_loss(const Tensor& pred, const std::vector<double>& labels,
                    const std::vector<std::uint8_t>& mask) {
  if (pred.rank() != 2 || pred.cols() != 1)
    throw DimensionError("mse_loss: predictions must be [N x 1], got " +
                         shape_str(pred.shape()));
  const std::size_t n = pred.rows();
  if (labels.size() != n || mask.size() != n)
    throw DimensionError("mse_loss: label/mask length " + std::to_string(labels.size()) +
                         " does not match " + std::to_string(n) + " frames");
  std::size_t count = 0;
  for (auto m : mask) count += m != 0;
  if (count == 0) return {Tensor::scalar(0.0), 0};

  std::vector<double> label_v(n), mask_v(n);
  for (std::size_t i = 0; i < n; ++i) {
    label_v[i] = mask[i] ? labels[i] : 0.0;
    mask_v[i] = mask[i] ? 1.0 : 0.0;
  }
  Tensor label_t = Tensor::from_values({n, 1}, std::move(label_v));
  Tensor mask_t = Tensor::from_values({n, 1}, std::move(mask_v));
  Tensor diff = sub(pred, label_t);
  Tensor masked_sq = mul(mul(diff, diff), mask_t);
  return {scale(sum(masked_sq), 1.0 / static_cast<double>(count)), count};
}

MaskedLoss ce_loss(const Tensor& logits, const std::vector<int>& labels,
                   const std::vector<std::uint8_t>& mask) {
  if (logits.rank() != 2 || logits.cols() != kExpressionClasses)
    throw DimensionError("ce_loss: logits must be [N x 8], got " +
                         shape_str(logits.shape()));
  const std::size_t n = logits.rows();
  if (labels.size() != n || mask.size() != n)
    throw DimensionError("ce_loss: label/mask length mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (labels[i] < 0 || labels[i] >= static_cast<int>(kExpressionClasses))
      throw DataError("ce_loss: expression label " + std::to_string(labels[i]) +
                      " outside {0..7} at frame " + std::to_string(i));
    ++count;
  }
  if (count == 0) return {Tensor::scalar(0.0), 0};

  std::vector<std::size_t> index(n, 0);
  std::vector<double> mask_v(n);
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = mask[i] ? static_cast<std::size_t>(labels[i]) : 0;
    mask_v[i] = mask[i] ? 1.0 : 0.0;
  }
  Tensor logp = log_softmax(logits, 1);
  Tensor picked = take_per_row(logp, index);  // [N x 1]
  Tensor mask_t = Tensor::from_values({n, 1}, std::move(mask_v));
  Tensor nll = scale(mul(picked, mask_t), -1.0);
  return {scale(sum(nll), 1.0 / static_cast<double>(count)), count};
}

MaskedLoss bce_loss(const Tensor& logits,
                    const std::vector<std::array<std::uint8_t, kActionUnits>>& labels,
                    const std::vector<std::array<std::uint8_t, kActionUnits>>& mask) {
  if (logits.rank() != 2 || logits.cols() != kActionUnits)
    throw DimensionError("bce_loss: logits must be [N x 12], got " +
                         shape_str(logits.shape()));
  const std::size_t n = logits.rows();
  if (labels.size() != n || mask.size() != n)
    throw DimensionError("bce_loss: label/mask length mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kActionUnits; ++j) {
      if (!mask[i][j]) continue;
      if (labels[i][j] > 1)
        throw DataError("bce_loss: AU label " + std::to_string(labels[i][j]) +
                        " outside {0,1} at frame " + std::to_string(i));
      ++count;
    }
  if (count == 0) return {Tensor::scalar(0.0), 0};

  std::vector<double> label_v(n * kActionUnits, 0.0), mask_v(n * kActionUnits, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kActionUnits; ++j) {
      if (!mask[i][j]) continue;
      label_v[i * kActionUnits + j] = labels[i][j];
      mask_v[i * kActionUnits + j] = 1.0;
    }
  Tensor label_t = Tensor::from_values({n, kActionUnits}, std::move(label_v));
  Tensor mask_t = Tensor::from_values({n, kActionUnits}, std::move(mask_v));
  Tensor per_pair = bce_with_logits(logits, label_t);
  return {scale(sum(mul(per_pair, mask_t)), 1.0 / static_cast<double>(count)), count};
}

Tensor multi_task_loss(const std::map<Task, MaskedLoss>& losses,
                       const LossWeights& weights, const std::vector<Task>& task_set) {
  if (task_set.empty()) throw ConfigError("multi_task_loss: empty task set");
  Tensor total;
  for (Task t : task_set) {
    auto it = losses.find(t);
    if (it == losses.end())
      throw ConfigError(std::string("multi_task_loss: task ") + task_name(t) +
                        " in the task set has no loss value");
    Tensor term = scale(it->second.value, weights.of(t));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace mtl
