#include "mtl/segments.hpp"

namespace mtl {

SegmentPlan split_segments(std::size_t frames, std::size_t segment_len,
                           std::string video_id) {
  if (segment_len == 0) throw ConfigError("split_segments: segment length must be >= 1");
  SegmentPlan plan;
  plan.video_id = std::move(video_id);
  plan.segment_len = segment_len;
  for (std::size_t begin = 0; begin < frames; begin += segment_len) {
    SegmentRange range;
    range.begin = begin;
    range.end = std::min(begin + segment_len, frames);
    plan.segments.push_back(range);
  }
  return plan;
}

}  // namespace mtl
