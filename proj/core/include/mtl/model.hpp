#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtl/encoders.hpp"
#include "mtl/losses.hpp"
#include "mtl/tensor.hpp"

namespace mtl {

// The three weight-sharing frameworks: one shared encoder (SE), shared
// bottom layers with task-specific tops (SBE), and SBE plus a detached
// source->target feature feedback edge (SBE-HSF).
enum class Framework { SE, SBE, SBE_HSF };

const char* framework_name(Framework f);
Framework framework_from_name(const std::string& name);

// Ordered task subset plus the optional feedback edge (SBE-HSF only). The
// source side may be a set, e.g. {V, AU} -> A.
struct TaskSet {
  std::vector<Task> tasks;
  std::vector<Task> feedback_src;
  std::optional<Task> feedback_tgt;

  bool contains(Task t) const;
  bool has_feedback() const { return feedback_tgt.has_value(); }
  void validate(Framework framework) const;
};

struct ModelSpec {
  Framework framework = Framework::SE;
  EncoderConfig encoder;
  // Shared bottom depth for SBE / SBE-HSF; 0 selects the default split
  // (half the layers, at least one). Ignored for SE (everything is shared).
  std::size_t bottom_layers = 0;
  TaskSet tasks;
  std::vector<std::size_t> head_hidden{512, 256};
  LossWeights weights;

  void validate() const;
  std::size_t resolved_bottom_layers() const;
  std::size_t top_layers() const;
  // Architecture digest (framework, encoder dims, split, tasks, edge, head
  // sizes). Loss weights and dropout do not change shapes and are excluded.
  std::uint64_t digest() const;
};

// Task head: fully connected stack with ReLU + dropout on the hidden layers
// and a linear output of the task's dimension.
class Head {
 public:
  Head() = default;
  Head(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim,
       double dropout, ParamStore& params, const std::string& prefix, Rng& rng);

  Tensor forward(const Tensor& x, bool training, Rng& rng) const;

 private:
  struct Linear {
    Tensor w, b;
  };
  std::vector<Linear> layers_;
  double dropout_ = 0.0;
};

// Recurrent state for a whole model: the shared bottom plus one carry per
// task-specific top branch. Owned by the training loop, one per video stream.
struct ModelCarry {
  HiddenCarry bottom;
  std::map<Task, HiddenCarry> tops;
};

// Raw per-task outputs for one segment: [l x 1] for V/A, [l x 8] expression
// logits, [l x 12] AU logits. Clamping/softmax/sigmoid happen downstream.
struct TaskOutputs {
  std::map<Task, Tensor> raw;
};

class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed);

  TaskOutputs forward(const Tensor& features, ModelCarry& carry, bool training,
                      Rng& rng) const;
  ModelCarry make_carry() const;

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t digest() const { return spec_.digest(); }

 private:
  // Sequence representation: per-frame rows for recurrent stacks, one matrix
  // for transformer stacks.
  struct SeqRep {
    std::vector<Tensor> frames;
    Tensor matrix;
    bool is_matrix() const { return matrix.defined(); }
    Tensor as_matrix() const;
  };
  struct TopBranch {
    RecurrentStack recurrent;
    Tensor adapter_w, adapter_b;  // TRM tops: maps (1+sources)*dm -> dm
    TransformerStack transformer;
    bool present = false;
  };

  SeqRep bottom_forward(const Tensor& features, HiddenCarry& carry, bool training,
                        Rng& rng) const;
  SeqRep top_forward(Task task, const SeqRep& shared, const SeqRep* feedback,
                     HiddenCarry& carry, bool training, Rng& rng) const;
  static SeqRep detach_rep(const SeqRep& rep);
  static SeqRep concat_reps(const std::vector<SeqRep>& reps);

  ModelSpec spec_;
  ParamStore params_;
  RecurrentStack bottom_recurrent_;
  TransformerFrontend frontend_;
  TransformerStack bottom_transformer_;
  std::map<Task, TopBranch> tops_;
  std::map<Task, Head> heads_;
};

// Builds a model with freshly initialized parameters; parameter count is a
// pure function of the spec.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

// ---- checkpoints ----
// Versioned binary: magic "MTLA", format version, architecture digest, then
// named little-endian float64 blobs in registration order.

void save_checkpoint(const std::filesystem::path& path, const Model& model);
// Loads into an already-built model; digest or name/shape mismatch -> error.
void load_checkpoint(const std::filesystem::path& path, Model& model);
// Reads just the digest field (for pre-flight config checks).
std::uint64_t read_checkpoint_digest(const std::filesystem::path& path);

}  // namespace mtl
