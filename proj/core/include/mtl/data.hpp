#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtl/losses.hpp"
#include "mtl/rng.hpp"

namespace mtl {

// Missing-label sentinels used in label files. Masks are derived at load
// time; the sentinels never reach losses or metrics.
inline constexpr double kMissingValence = -5.0;
inline constexpr double kMissingArousal = -5.0;
inline constexpr int kMissingExpression = -1;
inline constexpr int kMissingAu = -1;

struct FeatureSetInfo {
  std::string name;
  std::size_t dim = 0;
};

// One video: all configured feature sets concatenated along the feature
// axis (widened to 64-bit on load) plus per-frame labels with masks.
struct VideoData {
  std::string id;
  std::size_t frames = 0;
  std::vector<std::int64_t> frame_ids;
  std::vector<double> features;  // frames x feature_dim, row-major
  LabelBatch labels;
};

struct Dataset {
  std::vector<FeatureSetInfo> feature_sets;
  std::size_t feature_dim = 0;
  std::vector<VideoData> videos;

  std::size_t total_frames() const;
  const VideoData* find_video(const std::string& id) const;
  Dataset subset(const std::vector<std::string>& video_ids) const;
};

// Manifest: UTF-8 TSV. Header block lines start with '#':
//   #mtl-manifest\tv1
//   #feature-set\t<name>\t<dim>      (one per set, order = concat order)
// then one row per video:
//   <video_id>\t<frames>\t<label_path>\t<feature_path per set...>
// Paths are relative to the manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Feature file: 16-byte header (magic "MTLF", u32 rows, u32 cols, u32
// reserved), then rows*cols little-endian float32, row-major.
void write_feature_file(const std::filesystem::path& path, std::size_t rows,
                        std::size_t cols, const std::vector<float>& data);
struct FeatureFile {
  std::size_t rows = 0, cols = 0;
  std::vector<float> data;
};
FeatureFile read_feature_file(const std::filesystem::path& path);

// Label file: TSV, one row per annotated frame:
//   frame_id, valence, arousal, expression, 12 AU columns
// with sentinels for missing annotations; no header row.
void write_label_file(const std::filesystem::path& path,
                      const std::vector<std::int64_t>& frame_ids,
                      const LabelBatch& labels);
std::pair<std::vector<std::int64_t>, LabelBatch> read_label_file(
    const std::filesystem::path& path);

// ---- fold splitting ----

struct FoldAssignment {
  struct Fold {
    std::vector<std::string> video_ids;
    std::size_t video_count = 0;
    std::size_t frame_count = 0;
  };
  std::vector<Fold> folds;
};

// Greedy balanced partition: videos sorted by frame count descending (seeded
// shuffle breaks ties), each assigned to the fold minimizing the normalized
// video-count + frame-count deviation.
FoldAssignment split_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);

// ---- batching ----

// One segment of one video, assigned to a persistent stream slot so the
// training loop can thread recurrent carry between consecutive segments.
struct BatchItem {
  std::size_t video_index = 0;
  std::size_t segment_index = 0;
  std::size_t frame_begin = 0;
  std::size_t frame_end = 0;
  bool first_segment = false;
  std::size_t stream_slot = 0;
};

struct Batch {
  std::vector<BatchItem> items;
};

// One epoch of batches: videos shuffled, then up to `batch_size` concurrent
// video streams advance segment-by-segment. Every annotated frame appears in
// exactly one batch; a stream's segments arrive in video order.
std::vector<Batch> make_batches(const Dataset& dataset, std::size_t segment_len,
                                std::size_t batch_size, Rng& rng);

// ---- synthetic data ----

struct SynthConfig {
  std::size_t videos = 50;
  std::size_t frames_min = 200;
  std::size_t frames_max = 200;
  std::vector<std::size_t> feature_dims = {16, 8};
  std::size_t latent_dim = 6;
  double feature_noise = 0.1;
  double missing_v = 0.1, missing_a = 0.1, missing_expr = 0.1, missing_au = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

// Writes a synthetic dataset (manifest + label + feature files) under
// `out_dir` and returns the manifest path. Labels are deterministic functions
// of smooth bounded latent trajectories; features are a noisy linear mix of
// the same latents, so every task is learnable and the tasks share structure.
std::filesystem::path synth_generate(const SynthConfig& config,
                                     const std::filesystem::path& out_dir);

// Deterministic holdout split by video (fraction of videos, at least one on
// each side when possible).
std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, double val_fraction,
                                          std::uint64_t seed);

}  // namespace mtl
