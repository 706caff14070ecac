#include "mtl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binio.hpp"
#include "mtl/segments.hpp"

namespace mtl {

std::size_t Dataset::total_frames() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.frames;
  return n;
}

const VideoData* Dataset::find_video(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return &v;
  return nullptr;
}

Dataset Dataset::subset(const std::vector<std::string>& video_ids) const {
  Dataset out;
  out.feature_sets = feature_sets;
  out.feature_dim = feature_dim;
  for (const std::string& id : video_ids) {
    const VideoData* v = find_video(id);
    if (!v) throw DataError("subset: unknown video id " + id);
    out.videos.push_back(*v);
  }
  return out;
}

// ---- feature files ----

namespace {
constexpr char kFeatureMagic[4] = {'M', 'T', 'L', 'F'};
}

void write_feature_file(const std::filesystem::path& path, std::size_t rows,
                        std::size_t cols, const std::vector<float>& data) {
  if (data.size() != rows * cols)
    throw DimensionError("write_feature_file: data size does not match rows*cols");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open feature file for writing: " + path.string());
  binio::write_magic(out, kFeatureMagic);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cols));
  binio::write_le<std::uint32_t>(out, 0);  // reserved
  for (float v : data) binio::write_le<float>(out, v);
  if (!out) throw DataError("failed writing feature file: " + path.string());
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file: " + path.string());
  binio::expect_magic(in, kFeatureMagic, "feature file " + path.string());
  FeatureFile file;
  file.rows = binio::read_le<std::uint32_t>(in, "feature rows");
  file.cols = binio::read_le<std::uint32_t>(in, "feature cols");
  (void)binio::read_le<std::uint32_t>(in, "reserved field");
  file.data.resize(file.rows * file.cols);
  for (float& v : file.data) v = binio::read_le<float>(in, "feature value");
  return file;
}

// ---- label files ----

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_label_file(const std::filesystem::path& path,
                      const std::vector<std::int64_t>& frame_ids,
                      const LabelBatch& labels) {
  if (frame_ids.size() != labels.frames())
    throw DimensionError("write_label_file: frame id / label count mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("cannot open label file for writing: " + path.string());
  for (std::size_t i = 0; i < frame_ids.size(); ++i) {
    out << frame_ids[i] << '\t'
        << fmt_double(labels.valence_mask[i] ? labels.valence[i] : kMissingValence)
        << '\t'
        << fmt_double(labels.arousal_mask[i] ? labels.arousal[i] : kMissingArousal)
        << '\t'
        << (labels.expression_mask[i] ? labels.expression[i] : kMissingExpression);
    for (std::size_t j = 0; j < kActionUnits; ++j)
      out << '\t'
          << (labels.au_mask[i][j] ? static_cast<int>(labels.au[i][j]) : kMissingAu);
    out << '\n';
  }
  if (!out) throw DataError("failed writing label file: " + path.string());
}

std::pair<std::vector<std::int64_t>, LabelBatch> read_label_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file: " + path.string());
  std::vector<std::int64_t> frame_ids;
  LabelBatch labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    auto next = [&](const char* what) {
      if (!std::getline(row, field, '\t'))
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": missing column " + what);
      return field;
    };
    frame_ids.push_back(std::stoll(next("frame_id")));
    const double v = std::stod(next("valence"));
    const double a = std::stod(next("arousal"));
    const int e = std::stoi(next("expression"));
    const bool v_ok = v != kMissingValence;
    const bool a_ok = a != kMissingArousal;
    const bool e_ok = e != kMissingExpression;
    if (v_ok && (v < -1.0 || v > 1.0))
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": valence outside [-1,1]");
    if (a_ok && (a < -1.0 || a > 1.0))
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": arousal outside [-1,1]");
    if (e_ok && (e < 0 || e >= static_cast<int>(kExpressionClasses)))
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expression class outside {0..7}");
    labels.valence.push_back(v_ok ? v : 0.0);
    labels.valence_mask.push_back(v_ok);
    labels.arousal.push_back(a_ok ? a : 0.0);
    labels.arousal_mask.push_back(a_ok);
    labels.expression.push_back(e_ok ? e : 0);
    labels.expression_mask.push_back(e_ok);
    std::array<std::uint8_t, kActionUnits> au{};
    std::array<std::uint8_t, kActionUnits> au_mask{};
    for (std::size_t j = 0; j < kActionUnits; ++j) {
      const int flag = std::stoi(next("au"));
      if (flag == kMissingAu) continue;
      if (flag != 0 && flag != 1)
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": AU flag outside {0,1}");
      au[j] = static_cast<std::uint8_t>(flag);
      au_mask[j] = 1;
    }
    labels.au.push_back(au);
    labels.au_mask.push_back(au_mask);
  }
  return {std::move(frame_ids), std::move(labels)};
}

// ---- manifest / dataset ----

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
  const std::filesystem::path base = manifest_path.parent_path();
  Dataset dataset;
  std::string line;
  std::size_t line_no = 0;
  bool saw_magic = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    if (line[0] == '#') {
      std::getline(row, field, '\t');
      if (field == "#mtl-manifest") {
        saw_magic = true;
      } else if (field == "#feature-set") {
        FeatureSetInfo info;
        if (!std::getline(row, info.name, '\t') || !std::getline(row, field, '\t'))
          throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                          ": malformed #feature-set line");
        info.dim = static_cast<std::size_t>(std::stoull(field));
        dataset.feature_sets.push_back(info);
      } else {
        throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                        ": unknown header line " + field);
      }
      continue;
    }
    if (!saw_magic)
      throw DataError(manifest_path.string() + ": missing #mtl-manifest header");
    if (dataset.feature_sets.empty())
      throw DataError(manifest_path.string() + ": no #feature-set declared before videos");

    VideoData video;
    if (!std::getline(row, video.id, '\t'))
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                      ": missing video id");
    if (!std::getline(row, field, '\t'))
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                      ": missing frame count");
    video.frames = static_cast<std::size_t>(std::stoull(field));
    if (!std::getline(row, field, '\t'))
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                      ": missing label path");
    const std::filesystem::path label_path = base / field;
    auto [frame_ids, labels] = read_label_file(label_path);
    if (labels.frames() != video.frames)
      throw DataError("label file " + label_path.string() + " has " +
                      std::to_string(labels.frames()) + " rows, manifest declares " +
                      std::to_string(video.frames));
    video.frame_ids = std::move(frame_ids);
    video.labels = std::move(labels);

    std::size_t total_dim = 0;
    for (const auto& set : dataset.feature_sets) total_dim += set.dim;
    video.features.assign(video.frames * total_dim, 0.0);
    std::size_t col_off = 0;
    for (const auto& set : dataset.feature_sets) {
      if (!std::getline(row, field, '\t'))
        throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                        ": missing feature path for set " + set.name);
      const std::filesystem::path feat_path = base / field;
      FeatureFile file = read_feature_file(feat_path);
      if (file.rows != video.frames)
        throw DataError("feature file " + feat_path.string() + " has " +
                        std::to_string(file.rows) + " rows, manifest declares " +
                        std::to_string(video.frames));
      if (file.cols != set.dim)
        throw DataError("feature file " + feat_path.string() + " has dim " +
                        std::to_string(file.cols) + ", feature set " + set.name +
                        " declares " + std::to_string(set.dim));
      for (std::size_t r = 0; r < file.rows; ++r)
        for (std::size_t c = 0; c < file.cols; ++c)
          video.features[r * total_dim + col_off + c] =
              static_cast<double>(file.data[r * file.cols + c]);
      col_off += set.dim;
    }
    dataset.feature_dim = total_dim;
    dataset.videos.push_back(std::move(video));
  }
  if (dataset.videos.empty())
    throw DataError(manifest_path.string() + ": manifest declares no videos");
  return dataset;
}

// ---- folds ----

FoldAssignment split_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("split_folds: k must be >= 2");
  if (k > dataset.videos.size())
    throw ConfigError("split_folds: k = " + std::to_string(k) + " exceeds " +
                      std::to_string(dataset.videos.size()) + " videos");
  std::vector<std::size_t> order(dataset.videos.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);  // randomizes tie order between equal-length videos
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset.videos[a].frames > dataset.videos[b].frames;
  });

  FoldAssignment assignment;
  assignment.folds.resize(k);
  const double target_frames =
      static_cast<double>(dataset.total_frames()) / static_cast<double>(k);
  const double target_videos =
      static_cast<double>(dataset.videos.size()) / static_cast<double>(k);
  for (std::size_t idx : order) {
    const VideoData& video = dataset.videos[idx];
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
      const auto& fold = assignment.folds[f];
      const double frame_dev =
          (static_cast<double>(fold.frame_count + video.frames)) / target_frames;
      const double video_dev =
          (static_cast<double>(fold.video_count + 1)) / target_videos;
      const double score = frame_dev + video_dev;
      if (f == 0 || score < best_score) {
        best = f;
        best_score = score;
      }
    }
    auto& fold = assignment.folds[best];
    fold.video_ids.push_back(video.id);
    fold.video_count += 1;
    fold.frame_count += video.frames;
  }
  return assignment;
}

// ---- batching ----

std::vector<Batch> make_batches(const Dataset& dataset, std::size_t segment_len,
                                std::size_t batch_size, Rng& rng) {
  if (segment_len == 0) throw ConfigError("make_batches: segment length must be >= 1");
  if (batch_size == 0) throw ConfigError("make_batches: batch size must be >= 1");
  std::vector<std::size_t> queue(dataset.videos.size());
  std::iota(queue.begin(), queue.end(), 0);
  rng.shuffle(queue);

  struct Stream {
    std::size_t video_index = 0;
    SegmentPlan plan;
    std::size_t next_segment = 0;
    bool active = false;
  };
  std::vector<Stream> streams(batch_size);
  std::size_t next_video = 0;

  auto refill = [&](Stream& stream) {
    while (next_video < queue.size()) {
      const std::size_t vi = queue[next_video++];
      const VideoData& video = dataset.videos[vi];
      SegmentPlan plan = split_segments(video.frames, segment_len, video.id);
      if (plan.segments.empty()) continue;  // zero-frame video; nothing to emit
      stream.video_index = vi;
      stream.plan = std::move(plan);
      stream.next_segment = 0;
      stream.active = true;
      return;
    }
    stream.active = false;
  };

  for (Stream& s : streams) refill(s);

  std::vector<Batch> batches;
  while (true) {
    Batch batch;
    for (std::size_t slot = 0; slot < streams.size(); ++slot) {
      Stream& stream = streams[slot];
      if (!stream.active) continue;
      const SegmentRange range = stream.plan.segments[stream.next_segment];
      BatchItem item;
      item.video_index = stream.video_index;
      item.segment_index = stream.next_segment;
      item.frame_begin = range.begin;
      item.frame_end = range.end;
      item.first_segment = stream.next_segment == 0;
      item.stream_slot = slot;
      batch.items.push_back(item);
      if (++stream.next_segment >= stream.plan.segments.size()) refill(stream);
    }
    if (batch.items.empty()) break;
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---- holdout split ----

std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, double val_fraction,
                                          std::uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ConfigError("split_holdout: fraction must be in (0,1)");
  if (dataset.videos.size() < 2)
    throw ConfigError("split_holdout: need at least two videos");
  std::vector<std::size_t> order(dataset.videos.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t val_count = static_cast<std::size_t>(
      std::round(val_fraction * static_cast<double>(order.size())));
  val_count = std::clamp<std::size_t>(val_count, 1, order.size() - 1);
  std::vector<std::string> train_ids, val_ids;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::string& id = dataset.videos[order[i]].id;
    if (i < val_count) val_ids.push_back(id);
    else train_ids.push_back(id);
  }
  // Keep manifest order within each side for reproducible iteration.
  auto by_position = [&](const std::string& a, const std::string& b) {
    auto pos = [&](const std::string& id) {
      for (std::size_t i = 0; i < dataset.videos.size(); ++i)
        if (dataset.videos[i].id == id) return i;
      return dataset.videos.size();
    };
    return pos(a) < pos(b);
  };
  std::sort(train_ids.begin(), train_ids.end(), by_position);
  std::sort(val_ids.begin(), val_ids.end(), by_position);
  return {dataset.subset(train_ids), dataset.subset(val_ids)};
}

}  // namespace mtl
