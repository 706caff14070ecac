#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/metrics.hpp"
#include "mtl/model.hpp"
#include "mtl/predictions.hpp"

namespace mtl {

struct TrainSchedule {
  std::size_t epochs = 50;
  double lr = 5e-5;
  std::size_t batch_size = 8;
  std::size_t segment_len = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::map<Task, double> task_losses;
  bool has_val = false;
  MetricsReport val;
};

struct TrainOptions {
  // When set, the run directory receives train_log.tsv, best/final
  // checkpoints and (with epoch ranges configured) per-epoch checkpoints.
  std::filesystem::path out_dir;
  // Inclusive 1-based epoch ranges per task; an epoch inside any range is
  // checkpointed as epoch_<n>.ckpt (no-validation training runs).
  std::map<Task, std::pair<std::size_t, std::size_t>> epoch_range_checkpoints;
  bool quiet = true;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::map<Task, std::size_t> best_epoch;   // tasks in T, when validating
  std::map<Task, double> best_metric;
  bool has_val = false;
  MetricsReport final_val;
};

// One full training run: per epoch, shuffled segment-stream batches, masked
// multi-task loss, Adam step; per-epoch validation metrics and best-per-task
// checkpoint retention when a validation set is given. Aborts with
// NumericError if the loss turns non-finite.
TrainResult train(Model& model, const Dataset& train_data, const Dataset* val_data,
                  const TrainSchedule& schedule, std::uint64_t seed,
                  const TrainOptions& options = {});

// Inference over a whole dataset: dropout off, V/A clamped to [-1, 1],
// expression softmaxed, AU sigmoided. Recurrent carry streams across each
// video's segments in order. Tasks outside the model's task set get neutral
// columns (0 for V/A and AUs, uniform expression).
PredictionSet predict(const Model& model, const Dataset& dataset,
                      std::size_t segment_len);

// Scores a prediction set against dataset labels (valid-label frames only).
// AU probabilities binarize at 0.5; expression takes the argmax.
MetricsReport evaluate_predictions(const PredictionSet& predictions,
                                   const Dataset& dataset);

}  // namespace mtl
