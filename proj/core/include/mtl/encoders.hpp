#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

enum class EncoderKind { GRU, LSTM, TRM };

const char* encoder_kind_name(EncoderKind k);
EncoderKind encoder_kind_from_name(const std::string& name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::GRU;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 1024;  // model dim for TRM
  std::size_t layers = 2;        // 4 for TRM by convention
  std::size_t heads = 4;         // TRM only
  std::size_t ffn_dim = 1024;    // TRM only
  double dropout = 0.3;
  bool positional_encoding = true;  // TRM only

  void validate() const;
};

// Recurrent state carried between consecutive segments of one video. Holds
// plain values (gradients are truncated at segment boundaries); reset to
// zeros at the start of each video. Empty for TRM.
struct HiddenCarry {
  std::vector<std::vector<double>> h;  // per layer
  std::vector<std::vector<double>> c;  // per layer, LSTM only

  static HiddenCarry zeros(std::size_t layers, std::size_t hidden, bool with_cell);
  bool empty() const { return h.empty() && c.empty(); }
};

// Ordered named parameter registry. Registration order is the canonical
// order for optimizer state and checkpoints.
class ParamStore {
 public:
  enum class Init { kZeros, kXavierUniform, kOnes };

  Tensor add(const std::string& name, Shape shape, Init init, Rng& rng);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  Tensor find(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t total_parameters() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Stack of GRU or LSTM layers processing one segment frame-by-frame. The
// carry is read at the first frame and replaced with the last frame's state.
class RecurrentStack {
 public:
  RecurrentStack() = default;
  RecurrentStack(EncoderKind kind, std::size_t input_dim, std::size_t hidden_dim,
                 std::size_t layers, double dropout, ParamStore& params,
                 const std::string& prefix, Rng& rng);

  // frames: list of [1 x input_dim] tensors. Returns per-frame [1 x hidden].
  std::vector<Tensor> forward(const std::vector<Tensor>& frames, HiddenCarry& carry,
                              bool training, Rng& rng) const;
  HiddenCarry make_carry() const;
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t output_dim() const { return hidden_dim_; }
  bool empty() const { return layers_.empty(); }

 private:
  // One affine gate: x*w_in + h*w_hid + bias.
  struct Gate {
    Tensor w_in;   // [in x hidden]
    Tensor w_hid;  // [hidden x hidden]
    Tensor bias;   // [hidden]
  };
  struct Layer {
    std::vector<Gate> gates;  // GRU: z, r, n; LSTM: i, f, g, o
    std::size_t in_dim = 0;
  };
  EncoderKind kind_ = EncoderKind::GRU;
  std::size_t hidden_dim_ = 0;
  double dropout_ = 0.0;
  std::vector<Layer> layers_;

  Tensor step_gru(const Layer& layer, const Tensor& x, const Tensor& h_prev) const;
  std::pair<Tensor, Tensor> step_lstm(const Layer& layer, const Tensor& x,
                                      const Tensor& h_prev, const Tensor& c_prev) const;
};

// Pre-norm transformer encoder blocks over a whole segment matrix. Context
// never crosses the segment: there is no carry.
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(std::size_t model_dim, std::size_t layers, std::size_t heads,
                   std::size_t ffn_dim, double dropout, bool final_norm,
                   ParamStore& params, const std::string& prefix, Rng& rng);

  Tensor forward(const Tensor& x, bool training, Rng& rng) const;  // [l x dm]
  std::size_t layer_count() const { return blocks_.size(); }
  bool has_final_norm() const { return final_gain_.defined(); }
  bool empty() const { return blocks_.empty() && !has_final_norm(); }

 private:
  struct Block {
    struct HeadProj {
      Tensor wq, wk, wv;  // [dm x head_dim]
      Tensor bq, bk, bv;  // [head_dim]
    };
    std::vector<HeadProj> heads;
    Tensor wo, bo;              // [dm x dm], [dm]
    Tensor ln1_gain, ln1_bias;  // [dm]
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;  // ffn
  };
  std::size_t model_dim_ = 0;
  std::size_t head_dim_ = 0;
  double dropout_ = 0.0;
  std::vector<Block> blocks_;
  Tensor final_gain_, final_bias_;

  Tensor attention(const Block& block, const Tensor& x, bool training, Rng& rng) const;
};

// Linear input projection plus fixed sinusoidal positional encoding; the
// entry point of every transformer encoder.
class TransformerFrontend {
 public:
  TransformerFrontend() = default;
  TransformerFrontend(std::size_t input_dim, std::size_t model_dim,
                      bool positional_encoding, double dropout, ParamStore& params,
                      const std::string& prefix, Rng& rng);

  Tensor forward(const Tensor& features, bool training, Rng& rng) const;

 private:
  Tensor w_, b_;
  bool positional_encoding_ = true;
  double dropout_ = 0.0;
  std::size_t model_dim_ = 0;
};

// Sinusoidal position table, rows 0..frames-1. Exposed for tests.
std::vector<double> sinusoidal_positions(std::size_t frames, std::size_t model_dim);

// Whole single-stack temporal encoder (all layers in one shared stack), as
// used by the share-encoder framework and by encoder-level tests. Features
// come in as one [l x input_dim] matrix; outputs are [l x hidden].
class TemporalEncoder {
 public:
  TemporalEncoder(const EncoderConfig& config, ParamStore& params,
                  const std::string& prefix, Rng& rng);

  Tensor forward(const Tensor& features, HiddenCarry& carry, bool training,
                 Rng& rng) const;
  HiddenCarry make_carry() const;
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  RecurrentStack recurrent_;
  TransformerFrontend frontend_;
  TransformerStack transformer_;
};

// Splits a [l x d] matrix into l constant [1 x d] rows (no gradient flows
// through the split; features are data).
std::vector<Tensor> rows_as_frames(const Tensor& matrix);

}  // namespace mtl
