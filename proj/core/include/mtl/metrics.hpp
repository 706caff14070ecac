#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mtl/losses.hpp"

namespace mtl {

// Concordance correlation coefficient with population (1/N) moments:
// 2*cov / (var_x + var_y + (mean_x - mean_y)^2). Empty input is an error;
// a zero denominator only happens for constant-equal inputs and yields 1.
double ccc(std::span<const double> preds, std::span<const double> labels);

// Macro F1 over the 8 expression classes. Classes absent from both the
// predictions and the labels are excluded from the mean; per-class values
// and the inclusion flags are reported so either convention can be recomputed.
double macro_f1_expr(std::span<const int> preds, std::span<const int> labels,
                     std::array<double, kExpressionClasses>* per_class = nullptr,
                     std::array<bool, kExpressionClasses>* included = nullptr);

// Macro F1 over the 12 AUs (positive-class binary F1 per AU, unmasked frames
// only; an AU with no positives on either side scores 0 and is flagged).
double macro_f1_au(const std::vector<std::array<std::uint8_t, kActionUnits>>& preds,
                   const std::vector<std::array<std::uint8_t, kActionUnits>>& labels,
                   const std::vector<std::array<std::uint8_t, kActionUnits>>& masks,
                   std::array<double, kActionUnits>* per_au = nullptr,
                   std::array<bool, kActionUnits>* degenerate = nullptr);

// Challenge score: 0.5*(ccc_v + ccc_a) + f1_expr + f1_au.
double p_mtl(double ccc_v, double ccc_a, double f1_expr, double f1_au);

// Full evaluation record for one prediction set against labels. Tasks with
// no evaluated frames keep zero components (their frame counts say so) and
// contribute nothing to p_mtl.
struct MetricsReport {
  double ccc_v = 0.0, ccc_a = 0.0, f1_expr = 0.0, f1_au = 0.0;
  double p_mtl = 0.0;
  std::array<double, kExpressionClasses> f1_expr_per_class{};
  std::array<bool, kExpressionClasses> expr_class_included{};
  std::array<double, kActionUnits> f1_au_per_unit{};
  std::array<bool, kActionUnits> au_degenerate{};
  std::size_t frames_v = 0, frames_a = 0, frames_expr = 0, frames_au = 0;

  double task_metric(Task t) const;  // CCC for V/A, macro F1 for EXPR/AU

  // Flat key-value text block (one "key\tvalue" line per field).
  void write_text(std::ostream& out) const;
  // Machine-readable single row; `header` emits the column names instead.
  static std::string tsv_header(const std::string& key_column = "run");
  std::string tsv_row(const std::string& key) const;
};

}  // namespace mtl
