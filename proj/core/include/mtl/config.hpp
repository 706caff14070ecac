#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/model.hpp"
#include "mtl/train.hpp"

namespace mtl {

struct DatasetConfig {
  std::string train_manifest;
  std::string val_manifest;
  double val_fraction = 0.2;  // holdout-by-video split when no val manifest
};

struct EncoderConfigDoc {
  std::string kind = "GRU";
  std::size_t hidden_dim = 1024;
  std::size_t layers = 0;  // 0 = default for the kind (2 recurrent, 4 TRM)
  std::size_t heads = 4;
  std::size_t ffn_dim = 1024;
  bool positional_encoding = true;
};

struct ModelConfigDoc {
  std::string framework = "SE";
  EncoderConfigDoc encoder;
  std::size_t bottom_layers = 0;  // 0 = default split
  std::vector<std::string> tasks = {"V"};
  std::vector<std::string> feedback_src;  // SBE-HSF only
  std::string feedback_tgt;
  std::vector<std::size_t> head_hidden = {512, 256};
  double weight_v = 1.0, weight_a = 1.0, weight_expr = 1.0, weight_au = 1.0;
  std::string primary_task;  // defaults to the first task
};

struct ScheduleConfigDoc {
  std::size_t epochs = 50;
  double lr = 5e-5;
  std::size_t batch_size = 8;
  std::size_t segment_len = 0;  // 0 = 250 for arousal-primary models, 64 otherwise
  double dropout = 0.3;
  std::vector<std::uint64_t> seeds = {1};
  // Optional per-task inclusive epoch ranges for checkpoint retention when
  // training without a validation split (mixed train+val training).
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>
      epoch_ranges;
};

struct SmoothingConfigDoc {
  bool enabled = true;
  std::vector<std::size_t> grid;  // empty = default grid
  std::string order = "before_ensemble";
};

struct EnsembleConfigDoc {
  std::vector<std::string> inputs;
  std::string expr_strategy = "vote";
  std::string au_strategy = "average";
  double au_threshold = 0.5;
  std::string au_threshold_mode = "fixed";  // or "search"
  std::vector<std::uint64_t> class_frequencies;  // 8 counts, optional
};

struct SynthConfigDoc {
  std::size_t videos = 50;
  std::size_t frames_min = 200;
  std::size_t frames_max = 200;
  std::vector<std::size_t> feature_dims = {16, 8};
  std::size_t latent_dim = 6;
  double feature_noise = 0.1;
  double missing_v = 0.1, missing_a = 0.1, missing_expr = 0.1, missing_au = 0.1;
};

struct CvConfigDoc {
  std::size_t k = 6;
};

// Declarative run configuration. Schema-validated on load: unknown keys are
// rejected; the fully resolved document is echoed into every run directory.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "runs/out";
  DatasetConfig dataset;
  ModelConfigDoc model;
  ScheduleConfigDoc schedule;
  SmoothingConfigDoc smoothing;
  EnsembleConfigDoc ensemble;
  SynthConfigDoc synth;
  CvConfigDoc cv;

  Task primary_task() const;
  std::size_t resolved_segment_len() const;
  ModelSpec model_spec(std::size_t input_dim) const;
  TrainSchedule train_schedule() const;
  SynthConfig synth_config() const;
  std::vector<std::size_t> smoothing_grid() const;
  std::string resolved_json() const;  // pretty-printed, fully defaulted
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text);

// Writes resolved_config.json into `dir` (creating it).
void echo_config(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace mtl
