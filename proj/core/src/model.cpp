#include "mtl/model.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>

namespace mtl {

const char* framework_name(Framework f) {
  switch (f) {
    case Framework::SE: return "SE";
    case Framework::SBE: return "SBE";
    case Framework::SBE_HSF: return "SBE-HSF";
  }
  return "?";
}

Framework framework_from_name(const std::string& name) {
  if (name == "SE" || name == "se") return Framework::SE;
  if (name == "SBE" || name == "sbe") return Framework::SBE;
  if (name == "SBE-HSF" || name == "SBE_HSF" || name == "sbe-hsf" || name == "sbe_hsf")
    return Framework::SBE_HSF;
  throw ConfigError("unknown framework: " + name);
}

bool TaskSet::contains(Task t) const {
  return std::find(tasks.begin(), tasks.end(), t) != tasks.end();
}

void TaskSet::validate(Framework framework) const {
  if (tasks.empty()) throw ConfigError("task set must contain at least one task");
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i] == tasks[j])
        throw ConfigError(std::string("duplicate task in task set: ") +
                          task_name(tasks[i]));
  if (framework == Framework::SBE_HSF) {
    if (!feedback_tgt.has_value() || feedback_src.empty())
      throw ConfigError("SBE-HSF requires a feedback edge (source set and target)");
  } else if (feedback_tgt.has_value() || !feedback_src.empty()) {
    throw ConfigError(std::string("feedback edge is only valid for SBE-HSF, not ") +
                      framework_name(framework));
  }
  if (feedback_tgt.has_value()) {
    if (!contains(*feedback_tgt))
      throw ConfigError("feedback target is not in the task set");
    for (Task s : feedback_src) {
      if (!contains(s)) throw ConfigError("feedback source is not in the task set");
      if (s == *feedback_tgt)
        throw ConfigError("feedback edge is cyclic: target appears in the source set");
    }
    for (std::size_t i = 0; i < feedback_src.size(); ++i)
      for (std::size_t j = i + 1; j < feedback_src.size(); ++j)
        if (feedback_src[i] == feedback_src[j])
          throw ConfigError("duplicate task in the feedback source set");
  }
}

std::size_t ModelSpec::resolved_bottom_layers() const {
  if (framework == Framework::SE) return encoder.layers;
  if (bottom_layers == 0) return std::max<std::size_t>(1, encoder.layers / 2);
  return bottom_layers;
}

std::size_t ModelSpec::top_layers() const {
  return encoder.layers - resolved_bottom_layers();
}

void ModelSpec::validate() const {
  encoder.validate();
  tasks.validate(framework);
  if (framework != Framework::SE && bottom_layers > encoder.layers)
    throw ConfigError("bottom layer count " + std::to_string(bottom_layers) +
                      " exceeds encoder layers " + std::to_string(encoder.layers));
  if (framework == Framework::SBE_HSF && top_layers() == 0)
    throw ConfigError("SBE-HSF needs at least one task-specific top layer");
  if (head_hidden.empty())
    throw ConfigError("heads need at least one hidden layer size");
  if (weights.all_zero(tasks.tasks))
    std::cerr << "[mtl] warning: all loss weights for the configured tasks are zero; "
                 "training will not update the model\n";
}

std::uint64_t ModelSpec::digest() const {
  std::ostringstream canon;
  canon << framework_name(framework) << '|' << encoder_kind_name(encoder.kind) << '|'
        << encoder.input_dim << '|' << encoder.hidden_dim << '|' << encoder.layers;
  if (encoder.kind == EncoderKind::TRM)
    canon << '|' << encoder.heads << '|' << encoder.ffn_dim << '|'
          << (encoder.positional_encoding ? 1 : 0);
  canon << "|bottom" << resolved_bottom_layers() << "|tasks:";
  for (Task t : tasks.tasks) canon << task_name(t) << ',';
  if (tasks.has_feedback()) {
    canon << "|fb:";
    for (Task t : tasks.feedback_src) canon << task_name(t) << ',';
    canon << '>' << task_name(*tasks.feedback_tgt);
  }
  canon << "|head:";
  for (std::size_t h : head_hidden) canon << h << ',';
  const std::string s = canon.str();
  std::uint64_t hash = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (unsigned char ch : s) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

// ---- Head ----

Head::Head(std::size_t in_dim, const std::vector<std::size_t>& hidden,
           std::size_t out_dim, double dropout, ParamStore& params,
           const std::string& prefix, Rng& rng)
    : dropout_(dropout) {
  std::size_t current = in_dim;
  std::vector<std::size_t> dims = hidden;
  dims.push_back(out_dim);
  for (std::size_t i = 0; i < dims.size(); ++i) {
    Linear lin;
    const std::string base = prefix + ".l" + std::to_string(i) + ".";
    lin.w = params.add(base + "w", {current, dims[i]}, ParamStore::Init::kXavierUniform,
                       rng);
    lin.b = params.add(base + "b", {dims[i]}, ParamStore::Init::kZeros, rng);
    layers_.push_back(lin);
    current = dims[i];
  }
}

Tensor Head::forward(const Tensor& x_in, bool training, Rng& rng) const {
  Tensor x = x_in;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = add(matmul(x, layers_[i].w), layers_[i].b);
    if (i + 1 < layers_.size()) {
      x = relu(x);
      if (dropout_ > 0.0 && training) x = dropout(x, dropout_, training, rng);
    }
  }
  return x;
}

// ---- Model ----

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  const EncoderConfig& enc = spec_.encoder;
  const std::size_t bottom = spec_.resolved_bottom_layers();
  const std::size_t top = spec_.top_layers();

  if (enc.kind == EncoderKind::TRM) {
    frontend_ = TransformerFrontend(enc.input_dim, enc.hidden_dim,
                                    enc.positional_encoding, enc.dropout, params_,
                                    "enc.in", rng);
    bottom_transformer_ =
        TransformerStack(enc.hidden_dim, bottom, enc.heads, enc.ffn_dim, enc.dropout,
                         /*final_norm=*/top == 0, params_, "enc.bottom", rng);
  } else {
    bottom_recurrent_ = RecurrentStack(enc.kind, enc.input_dim, enc.hidden_dim, bottom,
                                       enc.dropout, params_, "enc.bottom", rng);
  }

  if (spec_.framework != Framework::SE) {
    for (Task t : spec_.tasks.tasks) {
      const bool is_target = spec_.tasks.has_feedback() && *spec_.tasks.feedback_tgt == t;
      const std::size_t sources = is_target ? spec_.tasks.feedback_src.size() : 0;
      const std::size_t in_dim = enc.hidden_dim * (1 + sources);
      TopBranch branch;
      const std::string prefix = std::string("enc.top.") + task_name(t);
      if (top > 0 || is_target) {
        branch.present = true;
        if (enc.kind == EncoderKind::TRM) {
          branch.adapter_w = params_.add(prefix + ".adapter.w", {in_dim, enc.hidden_dim},
                                         ParamStore::Init::kXavierUniform, rng);
          branch.adapter_b = params_.add(prefix + ".adapter.b", {enc.hidden_dim},
                                         ParamStore::Init::kZeros, rng);
          branch.transformer =
              TransformerStack(enc.hidden_dim, top, enc.heads, enc.ffn_dim, enc.dropout,
                               /*final_norm=*/true, params_, prefix, rng);
        } else {
          branch.recurrent = RecurrentStack(enc.kind, in_dim, enc.hidden_dim, top,
                                            enc.dropout, params_, prefix, rng);
        }
      }
      tops_.emplace(t, std::move(branch));
    }
  }

  for (Task t : spec_.tasks.tasks)
    heads_.emplace(t, Head(enc.hidden_dim, spec_.head_hidden, task_output_dim(t),
                           enc.dropout, params_, std::string("head.") + task_name(t),
                           rng));
}

ModelCarry Model::make_carry() const {
  ModelCarry carry;
  if (spec_.encoder.kind != EncoderKind::TRM) {
    carry.bottom = bottom_recurrent_.make_carry();
    for (const auto& [task, branch] : tops_)
      if (branch.present) carry.tops[task] = branch.recurrent.make_carry();
  }
  return carry;
}

Tensor Model::SeqRep::as_matrix() const {
  if (is_matrix()) return matrix;
  return concat(frames, 0);
}

Model::SeqRep Model::detach_rep(const SeqRep& rep) {
  SeqRep out;
  if (rep.is_matrix()) {
    out.matrix = detach(rep.matrix);
  } else {
    out.frames.reserve(rep.frames.size());
    for (const Tensor& f : rep.frames) out.frames.push_back(detach(f));
  }
  return out;
}

Model::SeqRep Model::concat_reps(const std::vector<SeqRep>& reps) {
  SeqRep out;
  if (reps.front().is_matrix()) {
    std::vector<Tensor> mats;
    mats.reserve(reps.size());
    for (const SeqRep& r : reps) mats.push_back(r.matrix);
    out.matrix = concat(mats, 1);
  } else {
    const std::size_t frames = reps.front().frames.size();
    out.frames.reserve(frames);
    for (std::size_t i = 0; i < frames; ++i) {
      std::vector<Tensor> row;
      row.reserve(reps.size());
      for (const SeqRep& r : reps) row.push_back(r.frames[i]);
      out.frames.push_back(concat(row, 1));
    }
  }
  return out;
}

Model::SeqRep Model::bottom_forward(const Tensor& features, HiddenCarry& carry,
                                    bool training, Rng& rng) const {
  if (features.cols() != spec_.encoder.input_dim)
    throw DimensionError("model expects " + std::to_string(spec_.encoder.input_dim) +
                         "-dim features, got " + shape_str(features.shape()));
  SeqRep rep;
  if (spec_.encoder.kind == EncoderKind::TRM) {
    Tensor x = frontend_.forward(features, training, rng);
    rep.matrix = bottom_transformer_.forward(x, training, rng);
  } else {
    rep.frames = bottom_recurrent_.forward(rows_as_frames(features), carry, training, rng);
  }
  return rep;
}

Model::SeqRep Model::top_forward(Task task, const SeqRep& shared, const SeqRep* feedback,
                                 HiddenCarry& carry, bool training, Rng& rng) const {
  const TopBranch& branch = tops_.at(task);
  if (!branch.present) return shared;
  SeqRep input = shared;
  if (feedback != nullptr) input = concat_reps({shared, *feedback});
  SeqRep out;
  if (spec_.encoder.kind == EncoderKind::TRM) {
    Tensor x = add(matmul(input.matrix, branch.adapter_w), branch.adapter_b);
    out.matrix = branch.transformer.forward(x, training, rng);
  } else {
    out.frames = branch.recurrent.forward(input.frames, carry, training, rng);
  }
  return out;
}

TaskOutputs Model::forward(const Tensor& features, ModelCarry& carry, bool training,
                           Rng& rng) const {
  SeqRep shared = bottom_forward(features, carry.bottom, training, rng);

  std::map<Task, SeqRep> branch_out;
  if (spec_.framework == Framework::SE) {
    for (Task t : spec_.tasks.tasks) branch_out[t] = shared;
  } else {
    const bool hsf = spec_.tasks.has_feedback();
    const Task target = hsf ? *spec_.tasks.feedback_tgt : Task::V;
    // Source branches run first; the target consumes their detached outputs.
    for (Task t : spec_.tasks.tasks) {
      if (hsf && t == target) continue;
      branch_out[t] = top_forward(t, shared, nullptr, carry.tops[t], training, rng);
    }
    if (hsf) {
      std::vector<SeqRep> sources;
      sources.reserve(spec_.tasks.feedback_src.size());
      for (Task s : spec_.tasks.feedback_src)
        sources.push_back(detach_rep(branch_out.at(s)));
      SeqRep feedback = sources.size() == 1 ? sources.front() : concat_reps(sources);
      branch_out[target] =
          top_forward(target, shared, &feedback, carry.tops[target], training, rng);
    }
  }

  TaskOutputs outputs;
  for (Task t : spec_.tasks.tasks) {
    Tensor g = branch_out.at(t).as_matrix();
    outputs.raw[t] = heads_.at(t).forward(g, training, rng);
  }
  return outputs;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) { return Model(spec, seed); }

}  // namespace mtl
