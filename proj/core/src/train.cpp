#include "mtl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "mtl/adam.hpp"
#include "mtl/segments.hpp"

namespace mtl {

namespace {

Tensor segment_features(const VideoData& video, std::size_t begin, std::size_t end,
                        std::size_t dim) {
  std::vector<double> values(video.features.begin() + begin * dim,
                             video.features.begin() + end * dim);
  return Tensor::from_values({end - begin, dim}, std::move(values));
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

TrainResult train(Model& model, const Dataset& train_data, const Dataset* val_data,
                  const TrainSchedule& schedule, std::uint64_t seed,
                  const TrainOptions& options) {
  if (train_data.videos.empty()) throw DataError("train: empty dataset");
  if (train_data.feature_dim != model.spec().encoder.input_dim)
    throw DimensionError("train: dataset feature dim " +
                         std::to_string(train_data.feature_dim) +
                         " does not match model input dim " +
                         std::to_string(model.spec().encoder.input_dim));
  const std::vector<Task>& tasks = model.spec().tasks.tasks;
  const LossWeights& weights = model.spec().weights;

  AdamConfig adam_config;
  adam_config.lr = schedule.lr;
  adam_config.beta1 = schedule.beta1;
  adam_config.beta2 = schedule.beta2;
  adam_config.eps = schedule.eps;
  Adam optimizer(model.params().tensors(), adam_config);

  Rng dropout_rng(derive_seed(seed, 0xd20));

  const bool write_files = !options.out_dir.empty();
  std::ofstream log_file;
  if (write_files) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir / "train_log.tsv");
    log_file << "epoch\ttrain_loss";
    for (Task t : tasks) log_file << "\tloss_" << task_name(t);
    log_file << '\t' << MetricsReport::tsv_header("val") << '\n';
  }

  TrainResult result;
  result.has_val = val_data != nullptr;

  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    Rng batch_rng(derive_seed(seed, epoch));
    const std::vector<Batch> batches =
        make_batches(train_data, schedule.segment_len, schedule.batch_size, batch_rng);

    std::vector<ModelCarry> carries(schedule.batch_size);
    double loss_total = 0.0;
    std::size_t loss_steps = 0;
    std::map<Task, double> task_loss_total;
    std::map<Task, std::size_t> task_loss_steps;

    for (const Batch& batch : batches) {
      std::map<Task, std::vector<Tensor>> preds;
      LabelBatch batch_labels;
      for (const BatchItem& item : batch.items) {
        const VideoData& video = train_data.videos[item.video_index];
        if (item.first_segment) carries[item.stream_slot] = model.make_carry();
        Tensor features = segment_features(video, item.frame_begin, item.frame_end,
                                           train_data.feature_dim);
        TaskOutputs outputs = model.forward(features, carries[item.stream_slot],
                                            /*training=*/true, dropout_rng);
        for (Task t : tasks) preds[t].push_back(outputs.raw.at(t));
        batch_labels.append(video.labels, item.frame_begin, item.frame_end);
      }

      std::map<Task, MaskedLoss> losses;
      for (Task t : tasks) {
        Tensor joined = preds[t].size() == 1 ? preds[t][0] : concat(preds[t], 0);
        switch (t) {
          case Task::V:
            losses[t] = mse_loss(joined, batch_labels.valence, batch_labels.valence_mask);
            break;
          case Task::A:
            losses[t] = mse_loss(joined, batch_labels.arousal, batch_labels.arousal_mask);
            break;
          case Task::EXPR:
            losses[t] =
                ce_loss(joined, batch_labels.expression, batch_labels.expression_mask);
            break;
          case Task::AU:
            losses[t] = bce_loss(joined, batch_labels.au, batch_labels.au_mask);
            break;
        }
      }
      Tensor loss = multi_task_loss(losses, weights, tasks);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(loss_steps + 1));
      loss_total += loss_value;
      ++loss_steps;
      for (Task t : tasks)
        if (!losses[t].empty()) {
          task_loss_total[t] += losses[t].value.item();
          task_loss_steps[t] += 1;
        }
      if (loss.requires_grad()) {
        backward(loss);
        optimizer.step();
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_steps ? loss_total / static_cast<double>(loss_steps) : 0.0;
    for (Task t : tasks)
      entry.task_losses[t] = task_loss_steps[t]
                                 ? task_loss_total[t] /
                                       static_cast<double>(task_loss_steps[t])
                                 : 0.0;

    if (val_data != nullptr) {
      PredictionSet val_preds = predict(model, *val_data, schedule.segment_len);
      entry.val = evaluate_predictions(val_preds, *val_data);
      entry.has_val = true;
      for (Task t : tasks) {
        const double metric = entry.val.task_metric(t);
        auto it = result.best_metric.find(t);
        if (it == result.best_metric.end() || metric > it->second) {
          result.best_metric[t] = metric;
          result.best_epoch[t] = epoch;
          if (write_files)
            save_checkpoint(options.out_dir /
                                (std::string("best_") + task_name(t) + ".ckpt"),
                            model);
        }
      }
      result.final_val = entry.val;
    }

    if (write_files) {
      bool in_range = false;
      for (const auto& [task, range] : options.epoch_range_checkpoints)
        in_range = in_range || (epoch >= range.first && epoch <= range.second);
      if (in_range) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04zu.ckpt", epoch);
        save_checkpoint(options.out_dir / name, model);
      }
      log_file << epoch << '\t' << fmt_double(entry.train_loss);
      for (Task t : tasks) log_file << '\t' << fmt_double(entry.task_losses[t]);
      log_file << '\t' << entry.val.tsv_row("epoch_" + std::to_string(epoch)) << '\n';
      log_file.flush();
    }
    if (!options.quiet) {
      std::cerr << "[mtl] epoch " << epoch << " loss " << entry.train_loss;
      if (entry.has_val) std::cerr << " val_p_mtl " << entry.val.p_mtl;
      std::cerr << '\n';
    }
    result.log.push_back(std::move(entry));
  }

  if (write_files) save_checkpoint(options.out_dir / "final.ckpt", model);
  return result;
}

PredictionSet predict(const Model& model, const Dataset& dataset,
                      std::size_t segment_len) {
  if (dataset.feature_dim != model.spec().encoder.input_dim)
    throw DimensionError("predict: dataset feature dim does not match the model");
  NoGradGuard no_grad;
  Rng unused(0);
  const TaskSet& task_set = model.spec().tasks;

  PredictionSet set;
  set.model_tag = "model";
  for (const VideoData& video : dataset.videos) {
    VideoPredictions out;
    out.video_id = video.id;
    out.frame_ids = video.frame_ids;
    out.frames.assign(video.frames, FramePrediction{});
    for (FramePrediction& frame : out.frames) {
      frame.expr.fill(1.0 / static_cast<double>(kExpressionClasses));
      frame.au.fill(0.0);  // tasks the model lacks predict nothing
    }

    ModelCarry carry = model.make_carry();
    const SegmentPlan plan = split_segments(video.frames, segment_len, video.id);
    for (const SegmentRange& range : plan.segments) {
      Tensor features =
          segment_features(video, range.begin, range.end, dataset.feature_dim);
      TaskOutputs outputs = model.forward(features, carry, /*training=*/false, unused);
      for (Task t : task_set.tasks) {
        const Tensor& raw = outputs.raw.at(t);
        if (t == Task::V || t == Task::A) {
          for (std::size_t i = 0; i < range.length(); ++i) {
            const double value = std::clamp(raw.at(i, 0), -1.0, 1.0);
            if (t == Task::V) out.frames[range.begin + i].valence = value;
            else out.frames[range.begin + i].arousal = value;
          }
        } else if (t == Task::EXPR) {
          Tensor probs = softmax(raw, 1);
          for (std::size_t i = 0; i < range.length(); ++i)
            for (std::size_t c = 0; c < kExpressionClasses; ++c)
              out.frames[range.begin + i].expr[c] = probs.at(i, c);
        } else {
          Tensor probs = sigmoid(raw);
          for (std::size_t i = 0; i < range.length(); ++i)
            for (std::size_t j = 0; j < kActionUnits; ++j)
              out.frames[range.begin + i].au[j] = probs.at(i, j);
        }
      }
    }
    set.videos.push_back(std::move(out));
  }
  return set;
}

MetricsReport evaluate_predictions(const PredictionSet& predictions,
                                   const Dataset& dataset) {
  std::vector<double> v_pred, v_label, a_pred, a_label;
  std::vector<int> e_pred, e_label;
  std::vector<std::array<std::uint8_t, kActionUnits>> au_pred, au_label, au_mask;

  for (const VideoPredictions& video : predictions.videos) {
    const VideoData* data = dataset.find_video(video.video_id);
    if (!data)
      throw DataError("evaluate: labels missing for video " + video.video_id);
    if (data->frames != video.frames.size())
      throw DataError("evaluate: frame count mismatch for video " + video.video_id);
    const LabelBatch& labels = data->labels;
    for (std::size_t i = 0; i < video.frames.size(); ++i) {
      const FramePrediction& frame = video.frames[i];
      if (labels.valence_mask[i]) {
        v_pred.push_back(frame.valence);
        v_label.push_back(labels.valence[i]);
      }
      if (labels.arousal_mask[i]) {
        a_pred.push_back(frame.arousal);
        a_label.push_back(labels.arousal[i]);
      }
      if (labels.expression_mask[i]) {
        e_pred.push_back(frame.expr_argmax());
        e_label.push_back(labels.expression[i]);
      }
      bool any_au = false;
      for (std::size_t j = 0; j < kActionUnits; ++j) any_au |= labels.au_mask[i][j] != 0;
      if (any_au) {
        std::array<std::uint8_t, kActionUnits> flags{};
        for (std::size_t j = 0; j < kActionUnits; ++j)
          flags[j] = frame.au[j] >= 0.5 ? 1 : 0;
        au_pred.push_back(flags);
        au_label.push_back(labels.au[i]);
        au_mask.push_back(labels.au_mask[i]);
      }
    }
  }

  MetricsReport report;
  report.frames_v = v_pred.size();
  report.frames_a = a_pred.size();
  report.frames_expr = e_pred.size();
  report.frames_au = au_pred.size();
  if (!v_pred.empty()) report.ccc_v = ccc(v_pred, v_label);
  if (!a_pred.empty()) report.ccc_a = ccc(a_pred, a_label);
  if (!e_pred.empty())
    report.f1_expr = macro_f1_expr(e_pred, e_label, &report.f1_expr_per_class,
                                   &report.expr_class_included);
  if (!au_pred.empty())
    report.f1_au = macro_f1_au(au_pred, au_label, au_mask, &report.f1_au_per_unit,
                               &report.au_degenerate);
  report.p_mtl = p_mtl(report.ccc_v, report.ccc_a, report.f1_expr, report.f1_au);
  return report;
}

}  // namespace mtl
