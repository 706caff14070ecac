#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mtl/errors.hpp"

namespace mtl {

// Half-open index range over a video's annotated frames.
struct SegmentRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin; }
};

// Consecutive, non-overlapping segments covering all n annotated frames
// exactly once; ceil(n/l) segments, only the last may be shorter than l.
struct SegmentPlan {
  std::string video_id;
  std::size_t segment_len = 0;
  std::vector<SegmentRange> segments;

  std::size_t total_frames() const {
    return segments.empty() ? 0 : segments.back().end;
  }
};

// Splits n frames into fixed-length segments. n == 0 yields an empty plan
// (degenerate video); l must be >= 1.
SegmentPlan split_segments(std::size_t frames, std::size_t segment_len,
                           std::string video_id = {});

}  // namespace mtl
