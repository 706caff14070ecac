#include <doctest.h>

#include <cmath>

#include "mtl/config.hpp"
#include "mtl/train.hpp"
#include "support/tempdir.hpp"

using namespace mtl;
using mtl::testing::TempDir;

namespace {

Dataset tiny_dataset(std::uint64_t seed, std::size_t videos = 6,
                     std::size_t frames = 40) {
  static std::map<std::uint64_t, std::filesystem::path> cache;
  static std::vector<std::unique_ptr<TempDir>> dirs;
  SynthConfig config;
  config.videos = videos;
  config.frames_min = frames;
  config.frames_max = frames;
  config.feature_dims = {4, 3};
  config.latent_dim = 3;
  config.feature_noise = 0.05;
  config.seed = seed;
  dirs.push_back(std::make_unique<TempDir>("train_ds"));
  return load_dataset(synth_generate(config, dirs.back()->path()));
}

ModelSpec tiny_spec(const Dataset& dataset, std::vector<Task> tasks) {
  ModelSpec spec;
  spec.framework = Framework::SE;
  spec.encoder.kind = EncoderKind::GRU;
  spec.encoder.input_dim = dataset.feature_dim;
  spec.encoder.hidden_dim = 8;
  spec.encoder.layers = 1;
  spec.encoder.dropout = 0.1;
  spec.tasks.tasks = std::move(tasks);
  spec.head_hidden = {6, 4};
  return spec;
}

TrainSchedule tiny_schedule(std::size_t epochs = 5) {
  TrainSchedule schedule;
  schedule.epochs = epochs;
  schedule.lr = 5e-3;
  schedule.batch_size = 2;
  schedule.segment_len = 16;
  return schedule;
}

}  // namespace

TEST_CASE("training loss trends down on learnable synthetic data") {
  Dataset dataset = tiny_dataset(1);
  Model model(tiny_spec(dataset, {Task::V}), 7);
  TrainResult result = train(model, dataset, nullptr, tiny_schedule(5), 99);
  REQUIRE(result.log.size() == 5);
  std::size_t violations = 0;
  for (std::size_t i = 1; i < result.log.size(); ++i)
    violations += result.log[i].train_loss >= result.log[i - 1].train_loss;
  CHECK(violations <= 1);
}

TEST_CASE("same seed, same loss trace; different seed diverges") {
  Dataset dataset = tiny_dataset(2);
  auto run = [&](std::uint64_t model_seed, std::uint64_t train_seed) {
    Model model(tiny_spec(dataset, {Task::V, Task::AU}), model_seed);
    TrainResult result = train(model, dataset, nullptr, tiny_schedule(3), train_seed);
    std::vector<double> trace;
    for (const EpochLog& e : result.log) trace.push_back(e.train_loss);
    return trace;
  };
  CHECK(run(5, 11) == run(5, 11));
  CHECK(run(5, 11) != run(5, 12));
}

TEST_CASE("prediction output is clamped, normalized, and frame-complete") {
  Dataset dataset = tiny_dataset(3);
  Model model(tiny_spec(dataset, {Task::V, Task::A, Task::EXPR, Task::AU}), 21);
  PredictionSet preds = predict(model, dataset, 16);
  REQUIRE(preds.videos.size() == dataset.videos.size());
  for (std::size_t v = 0; v < preds.videos.size(); ++v) {
    CHECK(preds.videos[v].frames.size() == dataset.videos[v].frames);
    for (const FramePrediction& frame : preds.videos[v].frames) {
      CHECK(frame.valence >= -1.0);
      CHECK(frame.valence <= 1.0);
      double total = 0.0;
      for (double p : frame.expr) {
        CHECK(p >= 0.0);
        total += p;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
      for (double p : frame.au) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
    }
  }
}

TEST_CASE("validation metrics in the log match a fresh evaluation") {
  Dataset dataset = tiny_dataset(4, 8, 32);
  auto [train_split, val_split] = split_holdout(dataset, 0.25, 3);
  Model model(tiny_spec(dataset, {Task::V}), 31);
  TempDir dir("run");
  TrainOptions options;
  options.out_dir = dir.path();
  TrainResult result =
      train(model, train_split, &val_split, tiny_schedule(3), 17, options);
  REQUIRE(result.has_val);

  // The model ends at its final-epoch state; a fresh eval of final.ckpt must
  // reproduce the last validation row exactly.
  Model reloaded(tiny_spec(dataset, {Task::V}), 0);
  load_checkpoint(dir.path() / "final.ckpt", reloaded);
  PredictionSet preds = predict(reloaded, val_split, 16);
  MetricsReport report = evaluate_predictions(preds, val_split);
  CHECK(report.ccc_v == result.log.back().val.ccc_v);
  CHECK(report.p_mtl == result.log.back().val.p_mtl);

  // Best-per-task bookkeeping points at a real epoch.
  REQUIRE(result.best_epoch.count(Task::V));
  CHECK(result.best_epoch[Task::V] >= 1);
  CHECK(result.best_epoch[Task::V] <= 3);
  CHECK(std::filesystem::exists(dir.path() / "best_V.ckpt"));
  CHECK(std::filesystem::exists(dir.path() / "train_log.tsv"));
}

TEST_CASE("non-finite loss aborts with a numeric error") {
  Dataset dataset = tiny_dataset(5);
  Model model(tiny_spec(dataset, {Task::V}), 41);
  Tensor out_bias = model.params().find("head.V.l2.b");
  out_bias.values()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(model, dataset, nullptr, tiny_schedule(1), 1), NumericError);
}

TEST_CASE("epoch-range checkpoints are written without a validation split") {
  Dataset dataset = tiny_dataset(6);
  Model model(tiny_spec(dataset, {Task::V}), 51);
  TempDir dir("ranges");
  TrainOptions options;
  options.out_dir = dir.path();
  options.epoch_range_checkpoints[Task::V] = {2, 3};
  train(model, dataset, nullptr, tiny_schedule(4), 3, options);
  CHECK_FALSE(std::filesystem::exists(dir.path() / "epoch_0001.ckpt"));
  CHECK(std::filesystem::exists(dir.path() / "epoch_0002.ckpt"));
  CHECK(std::filesystem::exists(dir.path() / "epoch_0003.ckpt"));
  CHECK_FALSE(std::filesystem::exists(dir.path() / "epoch_0004.ckpt"));
}

TEST_CASE("training rejects datasets with the wrong feature width") {
  Dataset dataset = tiny_dataset(7);
  ModelSpec spec = tiny_spec(dataset, {Task::V});
  spec.encoder.input_dim = dataset.feature_dim + 1;
  Model model(spec, 61);
  CHECK_THROWS_AS(train(model, dataset, nullptr, tiny_schedule(1), 1), DimensionError);
}
