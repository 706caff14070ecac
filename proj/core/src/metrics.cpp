#include "mtl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace mtl {

double ccc(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size())
    throw DimensionError("ccc: length mismatch, " + std::to_string(preds.size()) +
                         " vs " + std::to_string(labels.size()));
  const std::size_t n = preds.size();
  if (n == 0) throw DataError("ccc: undefined on empty input");
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_x += preds[i];
    mean_y += labels[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double var_x = 0.0, var_y = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = preds[i] - mean_x;
    const double dy = labels[i] - mean_y;
    var_x += dx * dx;
    var_y += dy * dy;
    cov += dx * dy;
  }
  var_x /= static_cast<double>(n);
  var_y /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  const double mean_diff = mean_x - mean_y;
  const double denom = var_x + var_y + mean_diff * mean_diff;
  if (denom == 0.0) {
    // Only possible when both series are constant with equal value.
    return 1.0;
  }
  return 2.0 * cov / denom;
}

namespace {

struct F1Counts {
  double tp = 0, fp = 0, fn = 0;
  bool seen() const { return tp + fp + fn > 0; }
  double f1() const {
    const double denom = 2 * tp + fp + fn;
    return denom == 0.0 ? 0.0 : 2 * tp / denom;
  }
};

}  // namespace

double macro_f1_expr(std::span<const int> preds, std::span<const int> labels,
                     std::array<double, kExpressionClasses>* per_class,
                     std::array<bool, kExpressionClasses>* included) {
  if (preds.size() != labels.size())
    throw DimensionError("macro_f1_expr: length mismatch");
  if (preds.empty()) throw DataError("macro_f1_expr: undefined on empty input");
  std::array<F1Counts, kExpressionClasses> counts{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], y = labels[i];
    if (p < 0 || p >= static_cast<int>(kExpressionClasses) || y < 0 ||
        y >= static_cast<int>(kExpressionClasses))
      throw DataError("macro_f1_expr: class id outside {0..7} at frame " +
                      std::to_string(i));
    if (p == y) {
      counts[p].tp += 1;
    } else {
      counts[p].fp += 1;
      counts[y].fn += 1;
    }
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < kExpressionClasses; ++c) {
    const double f1 = counts[c].f1();
    if (per_class) (*per_class)[c] = f1;
    const bool use = counts[c].seen();
    if (included) (*included)[c] = use;
    if (use) {
      total += f1;
      ++used;
    }
  }
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

double macro_f1_au(const std::vector<std::array<std::uint8_t, kActionUnits>>& preds,
                   const std::vector<std::array<std::uint8_t, kActionUnits>>& labels,
                   const std::vector<std::array<std::uint8_t, kActionUnits>>& masks,
                   std::array<double, kActionUnits>* per_au,
                   std::array<bool, kActionUnits>* degenerate) {
  if (preds.size() != labels.size() || preds.size() != masks.size())
    throw DimensionError("macro_f1_au: length mismatch");
  if (preds.empty()) throw DataError("macro_f1_au: undefined on empty input");
  std::array<F1Counts, kActionUnits> counts{};
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < kActionUnits; ++j) {
      if (!masks[i][j]) continue;
      const bool p = preds[i][j] != 0, y = labels[i][j] != 0;
      if (p && y) counts[j].tp += 1;
      else if (p && !y) counts[j].fp += 1;
      else if (!p && y) counts[j].fn += 1;
    }
  double total = 0.0;
  for (std::size_t j = 0; j < kActionUnits; ++j) {
    const double f1 = counts[j].f1();
    if (per_au) (*per_au)[j] = f1;
    // All-negative predictions and labels leave no positive to score; the
    // AU contributes 0 by convention and is flagged in the breakdown.
    if (degenerate) (*degenerate)[j] = !counts[j].seen();
    total += f1;
  }
  return total / static_cast<double>(kActionUnits);
}

double p_mtl(double ccc_v, double ccc_a, double f1_expr, double f1_au) {
  return 0.5 * (ccc_v + ccc_a) + f1_expr + f1_au;
}

double MetricsReport::task_metric(Task t) const {
  switch (t) {
    case Task::V: return ccc_v;
    case Task::A: return ccc_a;
    case Task::EXPR: return f1_expr;
    case Task::AU: return f1_au;
  }
  return 0.0;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void MetricsReport::write_text(std::ostream& out) const {
  out << "ccc_v\t" << fmt_double(ccc_v) << '\n';
  out << "ccc_a\t" << fmt_double(ccc_a) << '\n';
  out << "f1_expr\t" << fmt_double(f1_expr) << '\n';
  out << "f1_au\t" << fmt_double(f1_au) << '\n';
  out << "p_mtl\t" << fmt_double(p_mtl) << '\n';
  out << "frames_v\t" << frames_v << '\n';
  out << "frames_a\t" << frames_a << '\n';
  out << "frames_expr\t" << frames_expr << '\n';
  out << "frames_au\t" << frames_au << '\n';
  for (std::size_t c = 0; c < kExpressionClasses; ++c)
    out << "f1_expr_class_" << c << '\t' << fmt_double(f1_expr_per_class[c])
        << (expr_class_included[c] ? "" : "\t(excluded)") << '\n';
  for (std::size_t j = 0; j < kActionUnits; ++j)
    out << "f1_au_" << j << '\t' << fmt_double(f1_au_per_unit[j])
        << (au_degenerate[j] ? "\t(degenerate)" : "") << '\n';
}

std::string MetricsReport::tsv_header(const std::string& key_column) {
  return key_column + "\tccc_v\tccc_a\tf1_expr\tf1_au\tp_mtl\tframes_v\tframes_a\t"
                      "frames_expr\tframes_au";
}

std::string MetricsReport::tsv_row(const std::string& key) const {
  std::ostringstream out;
  out << key << '\t' << fmt_double(ccc_v) << '\t' << fmt_double(ccc_a) << '\t'
      << fmt_double(f1_expr) << '\t' << fmt_double(f1_au) << '\t' << fmt_double(p_mtl)
      << '\t' << frames_v << '\t' << frames_a << '\t' << frames_expr << '\t' << frames_au;
  return out.str();
}

}  // namespace mtl
