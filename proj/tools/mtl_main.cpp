// mtl: synthesize data, train and evaluate multi-task sequence models, and
// post-process predictions (smoothing, ensembles, cross-validation).

#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <semaphore>

#include <CLI11.hpp>

#include "mtl/config.hpp"
#include "mtl/metrics.hpp"
#include "mtl/postprocess.hpp"
#include "mtl/train.hpp"

namespace {

using namespace mtl;

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  int threads_override = 0;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig config =
      args.config_path.empty() ? parse_run_config("{}") : load_run_config(args.config_path);
  if (!args.out_override.empty()) config.out = args.out_override;
  if (args.seed_set) {
    config.seed = args.seed_override;
    config.schedule.seeds = {args.seed_override};
  }
  if (args.threads_override > 0) config.threads = args.threads_override;
  return config;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration (JSON)");
  cmd->add_option("--out", args.out_override, "Output directory (overrides config)");
  cmd->add_option("--seed", args.seed_override, "Seed (overrides config and seed list)")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--threads", args.threads_override, "Worker threads (cv folds)");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_metrics_files(const std::filesystem::path& dir, const std::string& name,
                         const MetricsReport& report) {
  std::ofstream text(dir / (name + "_metrics.txt"));
  report.write_text(text);
  std::ofstream tsv(dir / (name + "_metrics.tsv"));
  tsv << MetricsReport::tsv_header() << '\n' << report.tsv_row(name) << '\n';
}

Dataset load_train_dataset(const RunConfig& config) {
  if (config.dataset.train_manifest.empty())
    throw ConfigError("dataset.train_manifest is required");
  return load_dataset(config.dataset.train_manifest);
}

// ---- synth ----

int cmd_synth(const CommonArgs& args) {
  RunConfig config = resolve_config(args);
  const std::filesystem::path out_dir = config.out;
  echo_config(config, out_dir);
  const auto manifest = synth_generate(config.synth_config(), out_dir / "dataset");
  std::cout << "wrote " << manifest.string() << '\n';
  return 0;
}

// ---- train ----

struct SeedRunResult {
  std::uint64_t seed = 0;
  MetricsReport metrics;
  bool has_val = false;
};

SeedRunResult run_one_seed(const RunConfig& config, const Dataset& train_split,
                           const Dataset* val_split, std::uint64_t seed,
                           const std::filesystem::path& dir) {
  Model model(config.model_spec(train_split.feature_dim), seed);
  TrainOptions options;
  options.out_dir = dir;
  for (const auto& [task, range] : config.schedule.epoch_ranges)
    options.epoch_range_checkpoints[task_from_name(task)] = range;
  TrainResult result =
      train(model, train_split, val_split, config.train_schedule(), seed, options);

  // Training-set class frequencies, kept next to the checkpoints for later
  // ensemble tie-breaking.
  ClassFrequencyTable freq = count_expression_classes(train_split);
  std::ofstream freq_file(dir / "class_frequencies.tsv");
  for (std::size_t c = 0; c < kExpressionClasses; ++c)
    freq_file << c << '\t' << freq.counts[c] << '\n';

  SeedRunResult out;
  out.seed = seed;
  out.has_val = result.has_val;
  if (result.has_val) {
    out.metrics = result.final_val;
    PredictionSet preds =
        predict(model, *val_split, config.train_schedule().segment_len);
    write_prediction_file(dir / "val_predictions.tsv", preds);
    write_metrics_files(dir, "val", result.final_val);
  }
  return out;
}

int cmd_train(const CommonArgs& args) {
  RunConfig config = resolve_config(args);
  const std::filesystem::path out_dir = config.out;
  echo_config(config, out_dir);

  Dataset full = load_train_dataset(config);
  Dataset train_split = full;
  Dataset val_holdout;
  const Dataset* val_split = nullptr;
  Dataset val_external;
  if (!config.dataset.val_manifest.empty()) {
    val_external = load_dataset(config.dataset.val_manifest);
    val_split = &val_external;
  } else if (config.dataset.val_fraction > 0.0) {
    auto split = split_holdout(full, config.dataset.val_fraction, config.seed);
    train_split = std::move(split.first);
    val_holdout = std::move(split.second);
    val_split = &val_holdout;
  }

  std::vector<SeedRunResult> results;
  for (std::uint64_t seed : config.schedule.seeds) {
    const auto dir = out_dir / ("seed_" + std::to_string(seed));
    std::cout << "training seed " << seed << " -> " << dir.string() << '\n';
    results.push_back(run_one_seed(config, train_split, val_split, seed, dir));
  }

  std::ofstream summary(out_dir / "summary_metrics.tsv");
  summary << MetricsReport::tsv_header("seed") << '\n';
  MetricsReport mean;
  std::size_t with_val = 0;
  for (const SeedRunResult& r : results) {
    if (!r.has_val) continue;
    summary << r.metrics.tsv_row(std::to_string(r.seed)) << '\n';
    mean.ccc_v += r.metrics.ccc_v;
    mean.ccc_a += r.metrics.ccc_a;
    mean.f1_expr += r.metrics.f1_expr;
    mean.f1_au += r.metrics.f1_au;
    ++with_val;
  }
  if (with_val > 0) {
    const double inv = 1.0 / static_cast<double>(with_val);
    mean.ccc_v *= inv;
    mean.ccc_a *= inv;
    mean.f1_expr *= inv;
    mean.f1_au *= inv;
    mean.p_mtl = p_mtl(mean.ccc_v, mean.ccc_a, mean.f1_expr, mean.f1_au);
    summary << mean.tsv_row("mean") << '\n';
    std::cout << "mean p_mtl over " << with_val << " seed(s): " << fmt_double(mean.p_mtl)
              << '\n';
  }
  return 0;
}

// ---- eval ----

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::string& data_manifest) {
  RunConfig config = resolve_config(args);
  const std::filesystem::path out_dir = config.out;
  echo_config(config, out_dir);

  const std::string manifest =
      data_manifest.empty() ? config.dataset.val_manifest : data_manifest;
  if (manifest.empty())
    throw ConfigError("eval needs --data or dataset.val_manifest");
  Dataset dataset = load_dataset(manifest);

  Model model(config.model_spec(dataset.feature_dim), 0);
  if (read_checkpoint_digest(checkpoint) != model.digest())
    throw ConfigError("checkpoint digest mismatch: " + checkpoint +
                      " was written by a different architecture than this config");
  load_checkpoint(checkpoint, model);

  PredictionSet preds = predict(model, dataset, config.train_schedule().segment_len);

  std::ofstream postproc(out_dir / "postproc_log.tsv");
  postproc << "step\ttask\twindow\tccc\n";
  if (config.smoothing.enabled) {
    for (Task task : {Task::V, Task::A}) {
      if (!model.spec().tasks.contains(task)) continue;
      WindowSearchResult best =
          search_window(preds, dataset, task, config.smoothing_grid());
      preds = smooth_predictions(preds, task, best.window % 2 == 1 ? best.window : 1);
      if (best.window % 2 == 0) {
        // Even winner: apply via the general moving average path.
        for (auto& video : preds.videos) {
          std::vector<double> series(video.frames.size());
          for (std::size_t i = 0; i < series.size(); ++i)
            series[i] = task == Task::V ? video.frames[i].valence
                                        : video.frames[i].arousal;
          std::vector<double> smoothed = moving_average(series, best.window);
          for (std::size_t i = 0; i < series.size(); ++i) {
            if (task == Task::V) video.frames[i].valence = smoothed[i];
            else video.frames[i].arousal = smoothed[i];
          }
        }
      }
      postproc << "smooth\t" << task_name(task) << '\t' << best.window << '\t'
               << fmt_double(best.ccc) << '\n';
    }
  }

  write_prediction_file(out_dir / "predictions.tsv", preds);
  MetricsReport report = evaluate_predictions(preds, dataset);
  write_metrics_files(out_dir, "eval", report);
  std::cout << "p_mtl " << fmt_double(report.p_mtl) << '\n';
  return 0;
}

// ---- ensemble ----

int cmd_ensemble(const CommonArgs& args, std::vector<std::string> inputs,
                 const std::string& labels_manifest) {
  RunConfig config = resolve_config(args);
  const std::filesystem::path out_dir = config.out;
  echo_config(config, out_dir);

  if (inputs.empty()) inputs = config.ensemble.inputs;
  if (inputs.empty()) throw ConfigError("ensemble needs --inputs or ensemble.inputs");
  std::vector<PredictionSet> members;
  members.reserve(inputs.size());
  for (const std::string& path : inputs) members.push_back(read_prediction_file(path));

  Dataset labels;
  const bool have_labels = !labels_manifest.empty();
  if (have_labels) labels = load_dataset(labels_manifest);

  std::ofstream postproc(out_dir / "postproc_log.tsv");
  postproc << "step\ttask\tdetail\tvalue\n";
  const bool smooth_before =
      config.smoothing.enabled && config.smoothing.order == "before_ensemble";
  const bool smooth_after =
      config.smoothing.enabled && config.smoothing.order == "after_ensemble";
  postproc << "smoothing_order\t-\t" << config.smoothing.order << "\t-\n";

  auto smooth_va = [&](PredictionSet& set, const std::string& stage) {
    if (!have_labels) return;  // window search needs labels
    for (Task task : {Task::V, Task::A}) {
      WindowSearchResult best = search_window(set, labels, task, config.smoothing_grid());
      for (auto& video : set.videos) {
        std::vector<double> series(video.frames.size());
        for (std::size_t i = 0; i < series.size(); ++i)
          series[i] =
              task == Task::V ? video.frames[i].valence : video.frames[i].arousal;
        std::vector<double> smoothed = moving_average(series, best.window);
        for (std::size_t i = 0; i < series.size(); ++i) {
          if (task == Task::V) video.frames[i].valence = smoothed[i];
          else video.frames[i].arousal = smoothed[i];
        }
      }
      postproc << "smooth_" << stage << '\t' << task_name(task) << '\t' << best.window
               << '\t' << fmt_double(best.ccc) << '\n';
    }
  };

  if (smooth_before)
    for (PredictionSet& member : members) smooth_va(member, "member");

  PredictionSet combined = ensemble_regression(members, Task::V);
  {
    PredictionSet arousal = ensemble_regression(members, Task::A);
    for (std::size_t v = 0; v < combined.videos.size(); ++v)
      for (std::size_t f = 0; f < combined.videos[v].frames.size(); ++f)
        combined.videos[v].frames[f].arousal = arousal.videos[v].frames[f].arousal;
  }

  std::optional<ClassFrequencyTable> freq;
  if (!config.ensemble.class_frequencies.empty()) {
    ClassFrequencyTable table;
    for (std::size_t c = 0; c < kExpressionClasses; ++c)
      table.counts[c] = config.ensemble.class_frequencies[c];
    freq = table;
  } else if (have_labels) {
    freq = count_expression_classes(labels);
  }
  {
    PredictionSet expr = ensemble_vote_expr(members, freq);
    for (std::size_t v = 0; v < combined.videos.size(); ++v)
      for (std::size_t f = 0; f < combined.videos[v].frames.size(); ++f)
        combined.videos[v].frames[f].expr = expr.videos[v].frames[f].expr;
  }

  const bool search = config.ensemble.au_threshold_mode == "search";
  if (search && !have_labels)
    throw ConfigError("AU threshold search needs --labels");
  AuEnsembleResult au = ensemble_au(
      members,
      config.ensemble.au_strategy == "vote" ? AuEnsembleStrategy::kVote
                                            : AuEnsembleStrategy::kAverage,
      uniform_thresholds(config.ensemble.au_threshold), search ? &labels : nullptr);
  for (std::size_t v = 0; v < combined.videos.size(); ++v)
    for (std::size_t f = 0; f < combined.videos[v].frames.size(); ++f)
      combined.videos[v].frames[f].au = au.set.videos[v].frames[f].au;
  for (std::size_t j = 0; j < kActionUnits; ++j)
    postproc << "au_threshold\tAU\t" << j << '\t' << fmt_double(au.thresholds[j]) << '\n';

  if (smooth_after) smooth_va(combined, "combined");

  write_prediction_file(out_dir / "ensemble.tsv", combined);
  if (have_labels) {
    MetricsReport report = evaluate_predictions(combined, labels);
    write_metrics_files(out_dir, "ensemble", report);
    std::cout << "ensemble p_mtl " << fmt_double(report.p_mtl) << '\n';
  } else {
    std::cout << "wrote " << (out_dir / "ensemble.tsv").string() << '\n';
  }
  return 0;
}

// ---- cross-validation ----

int cmd_cv(const CommonArgs& args, std::size_t k_override) {
  RunConfig config = resolve_config(args);
  const std::filesystem::path out_dir = config.out;
  echo_config(config, out_dir);
  const std::size_t k = k_override != 0 ? k_override : config.cv.k;

  Dataset full = load_train_dataset(config);
  FoldAssignment folds = split_folds(full, k, config.seed);
  {
    std::ofstream fold_file(out_dir / "folds.tsv");
    fold_file << "fold\tvideos\tframes\tvideo_ids\n";
    for (std::size_t f = 0; f < k; ++f) {
      fold_file << (f + 1) << '\t' << folds.folds[f].video_count << '\t'
                << folds.folds[f].frame_count << '\t';
      for (std::size_t i = 0; i < folds.folds[f].video_ids.size(); ++i)
        fold_file << (i ? "," : "") << folds.folds[f].video_ids[i];
      fold_file << '\n';
    }
  }

  struct FoldOutcome {
    MetricsReport metrics;
    std::uint64_t seed = 0;
  };
  std::vector<FoldOutcome> outcomes(k);

  auto run_fold = [&](std::size_t fold_index) {
    std::vector<std::string> train_ids;
    for (std::size_t f = 0; f < k; ++f) {
      if (f == fold_index) continue;
      train_ids.insert(train_ids.end(), folds.folds[f].video_ids.begin(),
                       folds.folds[f].video_ids.end());
    }
    Dataset train_split = full.subset(train_ids);
    Dataset holdout = full.subset(folds.folds[fold_index].video_ids);
    const std::uint64_t fold_seed = derive_seed(config.seed, fold_index + 1);
    const auto dir = out_dir / ("fold_" + std::to_string(fold_index + 1));
    RunConfig fold_config = config;
    SeedRunResult result =
        run_one_seed(fold_config, train_split, &holdout, fold_seed, dir);
    outcomes[fold_index] = {result.metrics, fold_seed};
  };

  if (config.threads > 1) {
    std::counting_semaphore<64> slots(std::min(config.threads, 64));
    std::vector<std::future<void>> futures;
    for (std::size_t f = 0; f < k; ++f)
      futures.push_back(std::async(std::launch::async, [&, f] {
        slots.acquire();
        run_fold(f);
        slots.release();
      }));
    for (auto& future : futures) future.get();
  } else {
    for (std::size_t f = 0; f < k; ++f) {
      std::cout << "fold " << (f + 1) << "/" << k << '\n';
      run_fold(f);
    }
  }

  std::ofstream summary(out_dir / "cv_metrics.tsv");
  summary << MetricsReport::tsv_header("fold") << '\n';
  MetricsReport mean;
  double p_mtl_sum = 0.0;
  for (std::size_t f = 0; f < k; ++f) {
    summary << outcomes[f].metrics.tsv_row("fold_" + std::to_string(f + 1)) << '\n';
    mean.ccc_v += outcomes[f].metrics.ccc_v;
    mean.ccc_a += outcomes[f].metrics.ccc_a;
    mean.f1_expr += outcomes[f].metrics.f1_expr;
    mean.f1_au += outcomes[f].metrics.f1_au;
    p_mtl_sum += outcomes[f].metrics.p_mtl;
  }
  const double inv = 1.0 / static_cast<double>(k);
  mean.ccc_v *= inv;
  mean.ccc_a *= inv;
  mean.f1_expr *= inv;
  mean.f1_au *= inv;
  // Both aggregate conventions, labeled: the score of the averaged
  // components, and the average of the per-fold scores.
  mean.p_mtl = p_mtl(mean.ccc_v, mean.ccc_a, mean.f1_expr, mean.f1_au);
  summary << mean.tsv_row("average_of_components") << '\n';
  MetricsReport score_mean = mean;
  score_mean.p_mtl = p_mtl_sum * inv;
  summary << score_mean.tsv_row("mean_of_fold_scores") << '\n';
  std::cout << "cv average p_mtl (components first): " << fmt_double(mean.p_mtl) << '\n';

  // Optional cross-fold ensemble on a designated evaluation set.
  if (!config.dataset.val_manifest.empty()) {
    Dataset eval_set = load_dataset(config.dataset.val_manifest);
    std::vector<PredictionSet> members;
    for (std::size_t f = 0; f < k; ++f) {
      Model model(config.model_spec(eval_set.feature_dim), 0);
      load_checkpoint(out_dir / ("fold_" + std::to_string(f + 1)) / "final.ckpt",
                      model);
      members.push_back(predict(model, eval_set, config.train_schedule().segment_len));
    }
    PredictionSet combined = ensemble_regression(members, Task::V);
    PredictionSet arousal = ensemble_regression(members, Task::A);
    PredictionSet expr = ensemble_vote_expr(members, count_expression_classes(full));
    AuEnsembleResult au =
        ensemble_au(members, AuEnsembleStrategy::kAverage,
                    uniform_thresholds(config.ensemble.au_threshold),
                    config.ensemble.au_threshold_mode == "search" ? &eval_set : nullptr);
    for (std::size_t v = 0; v < combined.videos.size(); ++v)
      for (std::size_t f2 = 0; f2 < combined.videos[v].frames.size(); ++f2) {
        combined.videos[v].frames[f2].arousal = arousal.videos[v].frames[f2].arousal;
        combined.videos[v].frames[f2].expr = expr.videos[v].frames[f2].expr;
        combined.videos[v].frames[f2].au = au.set.videos[v].frames[f2].au;
      }
    write_prediction_file(out_dir / "cv_ensemble.tsv", combined);
    MetricsReport report = evaluate_predictions(combined, eval_set);
    write_metrics_files(out_dir, "cv_ensemble", report);
    std::cout << "cross-fold ensemble p_mtl: " << fmt_double(report.p_mtl) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task affect sequence toolkit"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, eval_args, ensemble_args, cv_args;
  std::string eval_checkpoint, eval_data, ensemble_labels;
  std::vector<std::string> ensemble_inputs;
  std::size_t cv_k = 0;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, synth_args);
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model per seed");
  add_common(train_cmd, train_args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset manifest to evaluate on");
  CLI::App* ensemble_cmd =
      app.add_subcommand("ensemble", "Combine prediction files");
  add_common(ensemble_cmd, ensemble_args);
  ensemble_cmd->add_option("--inputs", ensemble_inputs, "Member prediction files");
  ensemble_cmd->add_option("--labels", ensemble_labels,
                           "Labeled manifest for metrics and threshold search");
  CLI::App* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation");
  add_common(cv_cmd, cv_args);
  cv_cmd->add_option("--k", cv_k, "Fold count (overrides config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_checkpoint, eval_data);
    if (ensemble_cmd->parsed())
      return cmd_ensemble(ensemble_args, ensemble_inputs, ensemble_labels);
    if (cv_cmd->parsed()) return cmd_cv(cv_args, cv_k);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
