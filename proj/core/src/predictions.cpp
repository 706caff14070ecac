#include "mtl/predictions.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mtl {

int FramePrediction::expr_argmax() const {
  int best = 0;
  for (int c = 1; c < static_cast<int>(kExpressionClasses); ++c)
    if (expr[c] > expr[best]) best = c;
  return best;
}

std::size_t PredictionSet::total_frames() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.frames.size();
  return n;
}

const VideoPredictions* PredictionSet::find_video(const std::string& id) const {
  for (const auto& v : videos)
    if (v.video_id == id) return &v;
  return nullptr;
}

void PredictionSet::check_aligned(const PredictionSet& a, const PredictionSet& b) {
  auto describe = [](const PredictionSet& s, std::size_t vi, std::size_t fi) {
    return s.videos[vi].video_id + ":" + std::to_string(s.videos[vi].frame_ids[fi]);
  };
  if (a.videos.size() != b.videos.size())
    throw DataError("prediction sets are misaligned: " + std::to_string(a.videos.size()) +
                    " vs " + std::to_string(b.videos.size()) + " videos");
  for (std::size_t vi = 0; vi < a.videos.size(); ++vi) {
    const auto& va = a.videos[vi];
    const auto& vb = b.videos[vi];
    if (va.video_id != vb.video_id)
      throw DataError("prediction sets are misaligned at video " + va.video_id + " vs " +
                      vb.video_id);
    if (va.frame_ids.size() != vb.frame_ids.size())
      throw DataError("prediction sets are misaligned: video " + va.video_id + " has " +
                      std::to_string(va.frame_ids.size()) + " vs " +
                      std::to_string(vb.frame_ids.size()) + " frames");
    for (std::size_t fi = 0; fi < va.frame_ids.size(); ++fi)
      if (va.frame_ids[fi] != vb.frame_ids[fi])
        throw DataError("prediction sets are misaligned: missing key " +
                        describe(a, vi, fi) + " (other side has " + describe(b, vi, fi) +
                        ")");
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_prediction_file(const std::filesystem::path& path, const PredictionSet& set) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open prediction file for writing: " + path.string());
  out << "video_id\tframe_id\tvalence\tarousal";
  for (std::size_t c = 0; c < kExpressionClasses; ++c) out << "\texpr_" << c;
  for (std::size_t j = 0; j < kActionUnits; ++j) out << "\tau_" << j;
  out << '\n';
  for (const auto& video : set.videos)
    for (std::size_t fi = 0; fi < video.frames.size(); ++fi) {
      const FramePrediction& f = video.frames[fi];
      out << video.video_id << '\t' << video.frame_ids[fi] << '\t'
          << fmt_double(f.valence) << '\t' << fmt_double(f.arousal);
      for (double p : f.expr) out << '\t' << fmt_double(p);
      for (double p : f.au) out << '\t' << fmt_double(p);
      out << '\n';
    }
  if (!out) throw DataError("failed writing prediction file: " + path.string());
}

PredictionSet read_prediction_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prediction file: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw DataError("prediction file is empty: " + path.string());
  PredictionSet set;
  set.model_tag = path.stem().string();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string video_id, field;
    if (!std::getline(row, video_id, '\t'))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing video id");
    auto next_double = [&](const char* what) {
      if (!std::getline(row, field, '\t'))
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": missing column " + what);
      try {
        return std::stod(field);
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": bad number '" + field + "' in column " + what);
      }
    };
    FramePrediction frame;
    if (!std::getline(row, field, '\t'))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing frame id");
    const std::int64_t frame_id = std::stoll(field);
    frame.valence = next_double("valence");
    frame.arousal = next_double("arousal");
    double expr_sum = 0.0;
    for (std::size_t c = 0; c < kExpressionClasses; ++c) {
      frame.expr[c] = next_double("expr");
      if (frame.expr[c] < 0.0 || frame.expr[c] > 1.0)
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": expression probability outside [0,1]");
      expr_sum += frame.expr[c];
    }
    if (std::abs(expr_sum - 1.0) > 1e-6)
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expression probabilities sum to " + std::to_string(expr_sum));
    for (std::size_t j = 0; j < kActionUnits; ++j) {
      frame.au[j] = next_double("au");
      if (frame.au[j] < 0.0 || frame.au[j] > 1.0)
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": AU probability outside [0,1]");
    }
    if (set.videos.empty() || set.videos.back().video_id != video_id) {
      if (set.find_video(video_id) != nullptr)
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": video " + video_id + " appears in two separate blocks");
      set.videos.push_back({video_id, {}, {}});
    }
    VideoPredictions& video = set.videos.back();
    if (!video.frame_ids.empty() && video.frame_ids.back() >= frame_id)
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": duplicate or out-of-order frame key " + video_id + ":" +
                      std::to_string(frame_id));
    video.frame_ids.push_back(frame_id);
    video.frames.push_back(frame);
  }
  return set;
}

}  // namespace mtl
