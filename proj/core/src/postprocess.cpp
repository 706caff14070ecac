#include "mtl/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "mtl/metrics.hpp"

namespace mtl {

ClassFrequencyTable count_expression_classes(const Dataset& dataset) {
  ClassFrequencyTable table;
  for (const VideoData& video : dataset.videos)
    for (std::size_t i = 0; i < video.labels.frames(); ++i)
      if (video.labels.expression_mask[i])
        table.counts[video.labels.expression[i]] += 1;
  return table;
}

std::vector<double> moving_average(const std::vector<double>& series,
                                   std::size_t window) {
  if (window == 0) throw ConfigError("moving_average: window must be >= 1");
  if (window == 1 || series.size() <= 1) return series;
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(series.size());
  // Odd windows are centered; even windows take one extra past frame.
  const std::ptrdiff_t left = static_cast<std::ptrdiff_t>(window / 2);
  const std::ptrdiff_t right = static_cast<std::ptrdiff_t>((window - 1) / 2);
  std::vector<double> out(series.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - left);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + right);
    double total = 0.0;
    for (std::ptrdiff_t j = lo; j <= hi; ++j) total += series[j];
    out[i] = total / static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::vector<double> smooth(const std::vector<double>& series, std::size_t window) {
  if (window == 0) throw ConfigError("smooth: window must be >= 1");
  if (window % 2 == 0)
    throw ConfigError("smooth: window must be odd, got " + std::to_string(window));
  return moving_average(series, window);
}

std::vector<std::size_t> default_window_grid() {
  std::vector<std::size_t> grid;
  for (std::size_t w = 1; w <= 21; w += 2) grid.push_back(w);
  grid.push_back(10);
  std::sort(grid.begin(), grid.end());
  return grid;
}

WindowSearchResult search_window(const std::vector<std::vector<double>>& series,
                                 const std::vector<std::vector<double>>& labels,
                                 const std::vector<std::vector<std::uint8_t>>& masks,
                                 const std::vector<std::size_t>& grid) {
  if (grid.empty()) throw ConfigError("search_window: empty window grid");
  if (series.size() != labels.size() || series.size() != masks.size())
    throw DimensionError("search_window: series/label/mask video counts differ");
  std::size_t label_count = 0;
  for (const auto& m : masks)
    for (auto flag : m) label_count += flag != 0;
  if (label_count == 0) throw DataError("search_window: no labeled frames");

  WindowSearchResult best;
  bool first = true;
  std::vector<std::size_t> sorted_grid = grid;
  std::sort(sorted_grid.begin(), sorted_grid.end());
  for (std::size_t w : sorted_grid) {
    std::vector<double> all_preds, all_labels;
    all_preds.reserve(label_count);
    all_labels.reserve(label_count);
    for (std::size_t vi = 0; vi < series.size(); ++vi) {
      const std::vector<double> smoothed = moving_average(series[vi], w);
      for (std::size_t i = 0; i < smoothed.size(); ++i)
        if (masks[vi][i]) {
          all_preds.push_back(smoothed[i]);
          all_labels.push_back(labels[vi][i]);
        }
    }
    const double score = ccc(all_preds, all_labels);
    if (first || score > best.ccc) {  // ties keep the smallest window
      best.window = w;
      best.ccc = score;
      first = false;
    }
  }
  return best;
}

namespace {

std::vector<double> task_series(const VideoPredictions& video, Task task) {
  std::vector<double> out(video.frames.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = task == Task::V ? video.frames[i].valence : video.frames[i].arousal;
  return out;
}

void require_va(Task task, const char* op) {
  if (task != Task::V && task != Task::A)
    throw ConfigError(std::string(op) + " applies to V or A only");
}

}  // namespace

PredictionSet smooth_predictions(const PredictionSet& set, Task task,
                                 std::size_t window) {
  require_va(task, "smooth_predictions");
  PredictionSet out = set;
  for (VideoPredictions& video : out.videos) {
    const std::vector<double> smoothed = smooth(task_series(video, task), window);
    for (std::size_t i = 0; i < video.frames.size(); ++i) {
      if (task == Task::V) video.frames[i].valence = smoothed[i];
      else video.frames[i].arousal = smoothed[i];
    }
  }
  return out;
}

WindowSearchResult search_window(const PredictionSet& set, const Dataset& dataset,
                                 Task task, const std::vector<std::size_t>& grid) {
  require_va(task, "search_window");
  std::vector<std::vector<double>> series, labels;
  std::vector<std::vector<std::uint8_t>> masks;
  for (const VideoPredictions& video : set.videos) {
    const VideoData* data = dataset.find_video(video.video_id);
    if (!data) throw DataError("search_window: labels missing for video " + video.video_id);
    if (data->frames != video.frames.size())
      throw DataError("search_window: frame count mismatch for video " + video.video_id);
    series.push_back(task_series(video, task));
    labels.push_back(task == Task::V ? data->labels.valence : data->labels.arousal);
    masks.push_back(task == Task::V ? data->labels.valence_mask
                                    : data->labels.arousal_mask);
  }
  return search_window(series, labels, masks, grid);
}

// ---- ensembles ----

namespace {

void check_members(const std::vector<PredictionSet>& members, const char* op) {
  if (members.empty()) throw ConfigError(std::string(op) + ": no member files");
  for (std::size_t i = 1; i < members.size(); ++i)
    PredictionSet::check_aligned(members[0], members[i]);
}

}  // namespace

PredictionSet ensemble_regression(const std::vector<PredictionSet>& members, Task task) {
  require_va(task, "ensemble_regression");
  check_members(members, "ensemble_regression");
  PredictionSet out = members[0];
  const double inv = 1.0 / static_cast<double>(members.size());
  for (std::size_t vi = 0; vi < out.videos.size(); ++vi)
    for (std::size_t fi = 0; fi < out.videos[vi].frames.size(); ++fi) {
      double total = 0.0;
      for (const PredictionSet& m : members) {
        const FramePrediction& f = m.videos[vi].frames[fi];
        total += task == Task::V ? f.valence : f.arousal;
      }
      const double mean = std::clamp(total * inv, -1.0, 1.0);
      if (task == Task::V) out.videos[vi].frames[fi].valence = mean;
      else out.videos[vi].frames[fi].arousal = mean;
    }
  return out;
}

PredictionSet ensemble_vote_expr(const std::vector<PredictionSet>& members,
                                 const std::optional<ClassFrequencyTable>& freq) {
  check_members(members, "ensemble_vote_expr");
  if (members.size() >= 2 && !freq.has_value())
    throw ConfigError("ensemble_vote_expr: a class frequency table is required to "
                      "break ties between two or more members");
  PredictionSet out = members[0];
  for (std::size_t vi = 0; vi < out.videos.size(); ++vi)
    for (std::size_t fi = 0; fi < out.videos[vi].frames.size(); ++fi) {
      std::array<int, kExpressionClasses> votes{};
      for (const PredictionSet& m : members)
        votes[m.videos[vi].frames[fi].expr_argmax()] += 1;
      const int max_votes = *std::max_element(votes.begin(), votes.end());
      int winner = -1;
      for (int c = 0; c < static_cast<int>(kExpressionClasses); ++c) {
        if (votes[c] != max_votes) continue;
        if (winner < 0) {
          winner = c;
        } else if (freq.has_value() && freq->counts[c] < freq->counts[winner]) {
          // Tie: the class seen least often in training wins.
          winner = c;
        }
      }
      FramePrediction& frame = out.videos[vi].frames[fi];
      frame.expr.fill(0.0);
      frame.expr[winner] = 1.0;
    }
  return out;
}

std::array<double, kActionUnits> uniform_thresholds(double value) {
  std::array<double, kActionUnits> t;
  t.fill(value);
  return t;
}

AuEnsembleResult ensemble_au(const std::vector<PredictionSet>& members,
                             AuEnsembleStrategy strategy,
                             const std::array<double, kActionUnits>& fixed_thresholds,
                             const Dataset* search_labels) {
  check_members(members, "ensemble_au");
  AuEnsembleResult result;
  result.set = members[0];
  result.thresholds = fixed_thresholds;
  PredictionSet& out = result.set;

  if (strategy == AuEnsembleStrategy::kVote) {
    if (search_labels != nullptr)
      throw ConfigError("ensemble_au: threshold search applies to the average "
                        "strategy only");
    for (std::size_t vi = 0; vi < out.videos.size(); ++vi)
      for (std::size_t fi = 0; fi < out.videos[vi].frames.size(); ++fi)
        for (std::size_t j = 0; j < kActionUnits; ++j) {
          int ones = 0;
          for (const PredictionSet& m : members)
            ones += m.videos[vi].frames[fi].au[j] >= fixed_thresholds[j] ? 1 : 0;
          const int zeros = static_cast<int>(members.size()) - ones;
          // Equal votes predict 1.
          out.videos[vi].frames[fi].au[j] = ones >= zeros ? 1.0 : 0.0;
        }
    return result;
  }

  // Average strategy: mean probability per (frame, AU).
  const double inv = 1.0 / static_cast<double>(members.size());
  std::vector<std::vector<std::array<double, kActionUnits>>> mean_probs(
      out.videos.size());
  for (std::size_t vi = 0; vi < out.videos.size(); ++vi) {
    mean_probs[vi].resize(out.videos[vi].frames.size());
    for (std::size_t fi = 0; fi < out.videos[vi].frames.size(); ++fi)
      for (std::size_t j = 0; j < kActionUnits; ++j) {
        double total = 0.0;
        for (const PredictionSet& m : members) total += m.videos[vi].frames[fi].au[j];
        mean_probs[vi][fi][j] = total * inv;
      }
  }

  if (search_labels != nullptr) {
    // Exhaustive per-AU scan of {0.01, ..., 0.99}: maximize that AU's F1 on
    // the labeled data; ties keep the smallest threshold.
    for (std::size_t j = 0; j < kActionUnits; ++j) {
      double best_f1 = -1.0, best_threshold = 0.5;
      for (int step = 1; step <= 99; ++step) {
        const double threshold = static_cast<double>(step) / 100.0;
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t vi = 0; vi < out.videos.size(); ++vi) {
          const VideoData* video = search_labels->find_video(out.videos[vi].video_id);
          if (!video)
            throw DataError("ensemble_au: labels missing for video " +
                            out.videos[vi].video_id);
          if (video->frames != out.videos[vi].frames.size())
            throw DataError("ensemble_au: frame count mismatch for video " +
                            out.videos[vi].video_id);
          for (std::size_t fi = 0; fi < out.videos[vi].frames.size(); ++fi) {
            if (!video->labels.au_mask[fi][j]) continue;
            const bool pred = mean_probs[vi][fi][j] >= threshold;
            const bool label = video->labels.au[fi][j] != 0;
            if (pred && label) tp += 1;
            else if (pred && !label) fp += 1;
            else if (!pred && label) fn += 1;
          }
        }
        const double denom = 2 * tp + fp + fn;
        const double f1 = denom == 0.0 ? 0.0 : 2 * tp / denom;
        if (f1 > best_f1) {
          best_f1 = f1;
          best_threshold = threshold;
        }
      }
      result.thresholds[j] = best_threshold;
    }
  }

  for (std::size_t vi = 0; vi < out.videos.size(); ++vi)
    for (std::size_t fi = 0; fi < out.videos[vi].frames.size(); ++fi)
      for (std::size_t j = 0; j < kActionUnits; ++j)
        out.videos[vi].frames[fi].au[j] =
            mean_probs[vi][fi][j] >= result.thresholds[j] ? 1.0 : 0.0;
  return result;
}

}  // namespace mtl
