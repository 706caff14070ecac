#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtl/losses.hpp"

namespace mtl {

// One frame's predictions across all four tasks: clamped valence/arousal,
// an 8-way expression distribution and 12 AU probabilities.
struct FramePrediction {
  double valence = 0.0;
  double arousal = 0.0;
  std::array<double, kExpressionClasses> expr{};
  std::array<double, kActionUnits> au{};

  int expr_argmax() const;
};

struct VideoPredictions {
  std::string video_id;
  std::vector<std::int64_t> frame_ids;
  std::vector<FramePrediction> frames;
};

// Predictions keyed by (video, frame), ordered by video then frame. Frame
// keys are unique; expression rows sum to 1 (within 1e-6 on load).
struct PredictionSet {
  std::string model_tag;
  std::vector<VideoPredictions> videos;

  std::size_t total_frames() const;
  const VideoPredictions* find_video(const std::string& id) const;
  // Throws DataError (naming offending keys) unless both sets cover exactly
  // the same (video, frame) pairs in the same order.
  static void check_aligned(const PredictionSet& a, const PredictionSet& b);
};

// TSV with a header row; columns, in order: video_id, frame_id, valence,
// arousal, 8 expression probabilities, 12 AU probabilities.
void write_prediction_file(const std::filesystem::path& path, const PredictionSet& set);
PredictionSet read_prediction_file(const std::filesystem::path& path);

}  // namespace mtl
