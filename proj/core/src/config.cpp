#include "mtl/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "mtl/postprocess.hpp"

namespace mtl {

using nlohmann::json;

namespace {

// Strict object reader: tracks which keys were consumed and rejects leftovers.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object())
      throw ConfigError("config: " + path_ + " must be an object");
  }

  ~ObjectReader() = default;

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for " + join(key) + ": " + e.what());
    }
  }

  void finish() {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("config: unknown key " + join(it.key()));
  }

  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& node() const { return node_; }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_dataset(const json& node, DatasetConfig& out) {
  ObjectReader r(node, "dataset");
  r.get("train_manifest", out.train_manifest);
  r.get("val_manifest", out.val_manifest);
  r.get("val_fraction", out.val_fraction);
  r.finish();
}

void parse_encoder(const json& node, EncoderConfigDoc& out) {
  ObjectReader r(node, "model.encoder");
  r.get("kind", out.kind);
  r.get("hidden_dim", out.hidden_dim);
  r.get("layers", out.layers);
  r.get("heads", out.heads);
  r.get("ffn_dim", out.ffn_dim);
  r.get("positional_encoding", out.positional_encoding);
  r.finish();
}

void parse_model(const json& node, ModelConfigDoc& out) {
  ObjectReader r(node, "model");
  r.get("framework", out.framework);
  if (r.has("encoder")) parse_encoder(r.at("encoder"), out.encoder);
  r.get("bottom_layers", out.bottom_layers);
  r.get("tasks", out.tasks);
  if (r.has("feedback")) {
    ObjectReader fb(r.at("feedback"), "model.feedback");
    fb.get("src", out.feedback_src);
    fb.get("tgt", out.feedback_tgt);
    fb.finish();
  }
  r.get("head_hidden", out.head_hidden);
  if (r.has("loss_weights")) {
    ObjectReader w(r.at("loss_weights"), "model.loss_weights");
    w.get("V", out.weight_v);
    w.get("A", out.weight_a);
    w.get("EXPR", out.weight_expr);
    w.get("AU", out.weight_au);
    w.finish();
  }
  r.get("primary_task", out.primary_task);
  r.finish();
}

void parse_schedule(const json& node, ScheduleConfigDoc& out) {
  ObjectReader r(node, "schedule");
  r.get("epochs", out.epochs);
  r.get("lr", out.lr);
  r.get("batch_size", out.batch_size);
  r.get("segment_len", out.segment_len);
  r.get("dropout", out.dropout);
  r.get("seeds", out.seeds);
  if (r.has("epoch_ranges")) {
    const json& ranges = r.at("epoch_ranges");
    ObjectReader er(ranges, "schedule.epoch_ranges");
    for (auto it = ranges.begin(); it != ranges.end(); ++it) {
      (void)er.has(it.key());  // every task key is legal
      const json& pair = it.value();
      if (!pair.is_array() || pair.size() != 2)
        throw ConfigError("config: schedule.epoch_ranges." + it.key() +
                          " must be [first_epoch, last_epoch]");
      out.epoch_ranges.emplace_back(
          it.key(), std::make_pair(pair[0].get<std::size_t>(),
                                   pair[1].get<std::size_t>()));
    }
    er.finish();
  }
  r.finish();
}

void parse_smoothing(const json& node, SmoothingConfigDoc& out) {
  ObjectReader r(node, "smoothing");
  r.get("enabled", out.enabled);
  r.get("grid", out.grid);
  r.get("order", out.order);
  r.finish();
  if (out.order != "before_ensemble" && out.order != "after_ensemble")
    throw ConfigError("config: smoothing.order must be before_ensemble or "
                      "after_ensemble");
}

void parse_ensemble(const json& node, EnsembleConfigDoc& out) {
  ObjectReader r(node, "ensemble");
  r.get("inputs", out.inputs);
  r.get("expr_strategy", out.expr_strategy);
  r.get("au_strategy", out.au_strategy);
  r.get("au_threshold", out.au_threshold);
  r.get("au_threshold_mode", out.au_threshold_mode);
  r.get("class_frequencies", out.class_frequencies);
  r.finish();
  if (out.expr_strategy != "vote")
    throw ConfigError("config: ensemble.expr_strategy must be 'vote'");
  if (out.au_strategy != "vote" && out.au_strategy != "average")
    throw ConfigError("config: ensemble.au_strategy must be 'vote' or 'average'");
  if (out.au_threshold_mode != "fixed" && out.au_threshold_mode != "search")
    throw ConfigError("config: ensemble.au_threshold_mode must be 'fixed' or 'search'");
  if (!out.class_frequencies.empty() && out.class_frequencies.size() != kExpressionClasses)
    throw ConfigError("config: ensemble.class_frequencies needs exactly 8 counts");
}

void parse_synth(const json& node, SynthConfigDoc& out) {
  ObjectReader r(node, "synth");
  r.get("videos", out.videos);
  r.get("frames_min", out.frames_min);
  r.get("frames_max", out.frames_max);
  r.get("feature_dims", out.feature_dims);
  r.get("latent_dim", out.latent_dim);
  r.get("feature_noise", out.feature_noise);
  if (r.has("missing")) {
    ObjectReader m(r.at("missing"), "synth.missing");
    m.get("v", out.missing_v);
    m.get("a", out.missing_a);
    m.get("expr", out.missing_expr);
    m.get("au", out.missing_au);
    m.finish();
  }
  r.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig config;
  ObjectReader r(root, "");
  r.get("seed", config.seed);
  r.get("threads", config.threads);
  r.get("out", config.out);
  if (r.has("dataset")) parse_dataset(r.at("dataset"), config.dataset);
  if (r.has("model")) parse_model(r.at("model"), config.model);
  if (r.has("schedule")) parse_schedule(r.at("schedule"), config.schedule);
  if (r.has("smoothing")) parse_smoothing(r.at("smoothing"), config.smoothing);
  if (r.has("ensemble")) parse_ensemble(r.at("ensemble"), config.ensemble);
  if (r.has("synth")) parse_synth(r.at("synth"), config.synth);
  if (r.has("cv")) {
    ObjectReader cv(r.at("cv"), "cv");
    cv.get("k", config.cv.k);
    cv.finish();
  }
  r.finish();

  if (config.threads < 1) throw ConfigError("config: threads must be >= 1");
  if (config.schedule.seeds.empty())
    throw ConfigError("config: schedule.seeds must not be empty");
  // Early structural validation (full validation happens at model build).
  (void)config.primary_task();
  for (const auto& [name, range] : config.schedule.epoch_ranges) {
    (void)task_from_name(name);
    if (range.first == 0 || range.second < range.first)
      throw ConfigError("config: bad epoch range for task " + name);
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

Task RunConfig::primary_task() const {
  if (!model.primary_task.empty()) {
    Task t = task_from_name(model.primary_task);
    bool found = false;
    for (const std::string& name : model.tasks) found |= task_from_name(name) == t;
    if (!found)
      throw ConfigError("config: primary_task " + model.primary_task +
                        " is not in model.tasks");
    return t;
  }
  if (model.tasks.empty()) throw ConfigError("config: model.tasks must not be empty");
  return task_from_name(model.tasks.front());
}

std::size_t RunConfig::resolved_segment_len() const {
  if (schedule.segment_len != 0) return schedule.segment_len;
  return primary_task() == Task::A ? 250 : 64;
}

ModelSpec RunConfig::model_spec(std::size_t input_dim) const {
  ModelSpec spec;
  spec.framework = framework_from_name(model.framework);
  spec.encoder.kind = encoder_kind_from_name(model.encoder.kind);
  spec.encoder.input_dim = input_dim;
  spec.encoder.hidden_dim = model.encoder.hidden_dim;
  spec.encoder.layers = model.encoder.layers != 0
                            ? model.encoder.layers
                            : (spec.encoder.kind == EncoderKind::TRM ? 4 : 2);
  spec.encoder.heads = model.encoder.heads;
  spec.encoder.ffn_dim = model.encoder.ffn_dim;
  spec.encoder.dropout = schedule.dropout;
  spec.encoder.positional_encoding = model.encoder.positional_encoding;
  spec.bottom_layers = model.bottom_layers;
  for (const std::string& name : model.tasks)
    spec.tasks.tasks.push_back(task_from_name(name));
  for (const std::string& name : model.feedback_src)
    spec.tasks.feedback_src.push_back(task_from_name(name));
  if (!model.feedback_tgt.empty())
    spec.tasks.feedback_tgt = task_from_name(model.feedback_tgt);
  spec.head_hidden = model.head_hidden;
  spec.weights.v = model.weight_v;
  spec.weights.a = model.weight_a;
  spec.weights.expr = model.weight_expr;
  spec.weights.au = model.weight_au;
  return spec;
}

TrainSchedule RunConfig::train_schedule() const {
  TrainSchedule s;
  s.epochs = schedule.epochs;
  s.lr = schedule.lr;
  s.batch_size = schedule.batch_size;
  s.segment_len = resolved_segment_len();
  return s;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s;
  s.videos = synth.videos;
  s.frames_min = synth.frames_min;
  s.frames_max = synth.frames_max;
  s.feature_dims = synth.feature_dims;
  s.latent_dim = synth.latent_dim;
  s.feature_noise = synth.feature_noise;
  s.missing_v = synth.missing_v;
  s.missing_a = synth.missing_a;
  s.missing_expr = synth.missing_expr;
  s.missing_au = synth.missing_au;
  s.seed = seed;
  return s;
}

std::vector<std::size_t> RunConfig::smoothing_grid() const {
  return smoothing.grid.empty() ? default_window_grid() : smoothing.grid;
}

std::string RunConfig::resolved_json() const {
  json root;
  root["seed"] = seed;
  root["threads"] = threads;
  root["out"] = out;
  root["dataset"] = {{"train_manifest", dataset.train_manifest},
                     {"val_manifest", dataset.val_manifest},
                     {"val_fraction", dataset.val_fraction}};
  json fb;
  fb["src"] = model.feedback_src;
  fb["tgt"] = model.feedback_tgt;
  root["model"] = {
      {"framework", model.framework},
      {"encoder",
       {{"kind", model.encoder.kind},
        {"hidden_dim", model.encoder.hidden_dim},
        {"layers", model.encoder.layers},
        {"heads", model.encoder.heads},
        {"ffn_dim", model.encoder.ffn_dim},
        {"positional_encoding", model.encoder.positional_encoding}}},
      {"bottom_layers", model.bottom_layers},
      {"tasks", model.tasks},
      {"feedback", fb},
      {"head_hidden", model.head_hidden},
      {"loss_weights",
       {{"V", model.weight_v},
        {"A", model.weight_a},
        {"EXPR", model.weight_expr},
        {"AU", model.weight_au}}},
      {"primary_task", model.primary_task}};
  json ranges = json::object();
  for (const auto& [name, range] : schedule.epoch_ranges)
    ranges[name] = {range.first, range.second};
  root["schedule"] = {{"epochs", schedule.epochs},
                      {"lr", schedule.lr},
                      {"batch_size", schedule.batch_size},
                      {"segment_len", schedule.segment_len},
                      {"resolved_segment_len", resolved_segment_len()},
                      {"dropout", schedule.dropout},
                      {"seeds", schedule.seeds},
                      {"epoch_ranges", ranges}};
  root["smoothing"] = {{"enabled", smoothing.enabled},
                       {"grid", smoothing_grid()},
                       {"order", smoothing.order}};
  root["ensemble"] = {{"inputs", ensemble.inputs},
                      {"expr_strategy", ensemble.expr_strategy},
                      {"au_strategy", ensemble.au_strategy},
                      {"au_threshold", ensemble.au_threshold},
                      {"au_threshold_mode", ensemble.au_threshold_mode},
                      {"class_frequencies", ensemble.class_frequencies}};
  root["synth"] = {{"videos", synth.videos},
                   {"frames_min", synth.frames_min},
                   {"frames_max", synth.frames_max},
                   {"feature_dims", synth.feature_dims},
                   {"latent_dim", synth.latent_dim},
                   {"feature_noise", synth.feature_noise},
                   {"missing",
                    {{"v", synth.missing_v},
                     {"a", synth.missing_a},
                     {"expr", synth.missing_expr},
                     {"au", synth.missing_au}}}};
  root["cv"] = {{"k", cv.k}};
  return root.dump(2) + "\n";
}

void echo_config(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "resolved_config.json");
  if (!out)
    throw DataError("cannot write resolved config into " + dir.string());
  out << config.resolved_json();
}

}  // namespace mtl
