#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/predictions.hpp"

namespace mtl {

// Training-set frame counts per expression class; used only to break ties
// in the expression vote (fewest training frames wins).
struct ClassFrequencyTable {
  std::array<std::uint64_t, kExpressionClasses> counts{};
};

ClassFrequencyTable count_expression_classes(const Dataset& dataset);

// Centered moving average with edge truncation (the window shrinks at the
// series ends). Window must be odd; window 1 is the identity.
std::vector<double> smooth(const std::vector<double>& series, std::size_t window);

// Internal helper behind the window search: also accepts even windows, using
// one extra trailing (past) frame on the left of the center.
std::vector<double> moving_average(const std::vector<double>& series,
                                   std::size_t window);

// Default search grid {1,3,5,...,21} plus 10.
std::vector<std::size_t> default_window_grid();

struct WindowSearchResult {
  std::size_t window = 1;
  double ccc = 0.0;
};

// Picks the window maximizing CCC of the per-video smoothed series against
// the labels (ties -> smallest window). Videos are smoothed independently;
// masked frames are excluded from the CCC.
WindowSearchResult search_window(const std::vector<std::vector<double>>& series,
                                 const std::vector<std::vector<double>>& labels,
                                 const std::vector<std::vector<std::uint8_t>>& masks,
                                 const std::vector<std::size_t>& grid);

// Applies per-video smoothing to the valence or arousal column of a
// prediction set. Other columns are untouched.
PredictionSet smooth_predictions(const PredictionSet& set, Task task,
                                 std::size_t window);

// Convenience: search the window for `task` against dataset labels.
WindowSearchResult search_window(const PredictionSet& set, const Dataset& labels,
                                 Task task, const std::vector<std::size_t>& grid);

// ---- ensembles ----
// Every ensemble takes aligned member files and returns a full prediction
// set copied from the first member with the ensembled task columns replaced.

// Per-frame unweighted mean of the members' V or A, clamped to [-1, 1].
PredictionSet ensemble_regression(const std::vector<PredictionSet>& members, Task task);

// Plurality vote over member argmaxes; ties go to the class with the fewest
// training-set frames. Output rows are one-hot. The frequency table is
// required for >= 2 members.
PredictionSet ensemble_vote_expr(const std::vector<PredictionSet>& members,
                                 const std::optional<ClassFrequencyTable>& freq);

enum class AuEnsembleStrategy { kVote, kAverage };

struct AuEnsembleResult {
  PredictionSet set;
  std::array<double, kActionUnits> thresholds{};  // thresholds actually applied
};

// Vote: per-AU majority over member binary decisions (member prob >= member
// threshold, default 0.5); a 0/1 tie predicts 1. Average: mean member
// probability binarized by a per-AU threshold. When `search_labels` is given
// the per-AU threshold is scanned over {0.01..0.99, step 0.01} maximizing
// that AU's F1 on the labeled data; otherwise `fixed_thresholds` applies.
AuEnsembleResult ensemble_au(const std::vector<PredictionSet>& members,
                             AuEnsembleStrategy strategy,
                             const std::array<double, kActionUnits>& fixed_thresholds,
                             const Dataset* search_labels);

std::array<double, kActionUnits> uniform_thresholds(double value);

}  // namespace mtl
