#include "mtl/encoders.hpp"

#include <cmath>

namespace mtl {

const char* encoder_kind_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::GRU: return "GRU";
    case EncoderKind::LSTM: return "LSTM";
    case EncoderKind::TRM: return "TRM";
  }
  return "?";
}

EncoderKind encoder_kind_from_name(const std::string& name) {
  if (name == "GRU" || name == "gru") return EncoderKind::GRU;
  if (name == "LSTM" || name == "lstm") return EncoderKind::LSTM;
  if (name == "TRM" || name == "trm" || name == "transformer") return EncoderKind::TRM;
  throw ConfigError("unknown encoder kind: " + name);
}

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ConfigError("encoder: input_dim must be positive");
  if (hidden_dim == 0) throw ConfigError("encoder: hidden_dim must be positive");
  if (layers == 0) throw ConfigError("encoder: layer count must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("encoder: dropout must be in [0,1)");
  if (kind == EncoderKind::TRM) {
    if (heads == 0 || hidden_dim % heads != 0)
      throw ConfigError("encoder: model dim " + std::to_string(hidden_dim) +
                        " not divisible by head count " + std::to_string(heads));
    if (ffn_dim == 0) throw ConfigError("encoder: ffn_dim must be positive");
  }
}

HiddenCarry HiddenCarry::zeros(std::size_t layers, std::size_t hidden, bool with_cell) {
  HiddenCarry carry;
  carry.h.assign(layers, std::vector<double>(hidden, 0.0));
  if (with_cell) carry.c.assign(layers, std::vector<double>(hidden, 0.0));
  return carry;
}

// ---- ParamStore ----

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  Tensor t;
  switch (init) {
    case Init::kZeros: t = Tensor::zeros(std::move(shape), true); break;
    case Init::kOnes: t = Tensor::full(std::move(shape), 1.0, true); break;
    case Init::kXavierUniform: t = Tensor::xavier_uniform(std::move(shape), rng); break;
  }
  entries_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("parameter not found: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

// ---- RecurrentStack ----

namespace {

constexpr const char* kGruGates[] = {"z", "r", "n"};
constexpr const char* kLstmGates[] = {"i", "f", "g", "o"};

}  // namespace

RecurrentStack::RecurrentStack(EncoderKind kind, std::size_t input_dim,
                               std::size_t hidden_dim, std::size_t layers,
                               double dropout, ParamStore& params,
                               const std::string& prefix, Rng& rng)
    : kind_(kind), hidden_dim_(hidden_dim), dropout_(dropout) {
  if (kind == EncoderKind::TRM)
    throw ContractError("RecurrentStack cannot be built for a transformer");
  const std::size_t gate_count = kind == EncoderKind::GRU ? 3 : 4;
  const char* const* gate_names = kind == EncoderKind::GRU ? kGruGates : kLstmGates;
  layers_.resize(layers);
  for (std::size_t li = 0; li < layers; ++li) {
    Layer& layer = layers_[li];
    layer.in_dim = li == 0 ? input_dim : hidden_dim;
    const std::string base = prefix + ".l" + std::to_string(li) + ".";
    for (std::size_t gi = 0; gi < gate_count; ++gi) {
      Gate gate;
      gate.w_in = params.add(base + gate_names[gi] + ".w_in", {layer.in_dim, hidden_dim},
                             ParamStore::Init::kXavierUniform, rng);
      gate.w_hid = params.add(base + gate_names[gi] + ".w_hid", {hidden_dim, hidden_dim},
                              ParamStore::Init::kXavierUniform, rng);
      gate.bias = params.add(base + gate_names[gi] + ".bias", {hidden_dim},
                             ParamStore::Init::kZeros, rng);
      layer.gates.push_back(gate);
    }
  }
}

HiddenCarry RecurrentStack::make_carry() const {
  return HiddenCarry::zeros(layers_.size(), hidden_dim_, kind_ == EncoderKind::LSTM);
}

Tensor RecurrentStack::step_gru(const Layer& layer, const Tensor& x,
                                const Tensor& h_prev) const {
  const Gate& gz = layer.gates[0];
  const Gate& gr = layer.gates[1];
  const Gate& gn = layer.gates[2];
  Tensor z = sigmoid(add(add(matmul(x, gz.w_in), matmul(h_prev, gz.w_hid)), gz.bias));
  Tensor r = sigmoid(add(add(matmul(x, gr.w_in), matmul(h_prev, gr.w_hid)), gr.bias));
  Tensor n = mtl::tanh(
      add(add(matmul(x, gn.w_in), matmul(mul(r, h_prev), gn.w_hid)), gn.bias));
  // h' = (1 - z) * n + z * h_prev
  Tensor one_minus_z = sub(Tensor::full(z.shape(), 1.0), z);
  return add(mul(one_minus_z, n), mul(z, h_prev));
}

std::pair<Tensor, Tensor> RecurrentStack::step_lstm(const Layer& layer, const Tensor& x,
                                                    const Tensor& h_prev,
                                                    const Tensor& c_prev) const {
  auto gate_pre = [&](const Gate& g) {
    return add(add(matmul(x, g.w_in), matmul(h_prev, g.w_hid)), g.bias);
  };
  Tensor i = sigmoid(gate_pre(layer.gates[0]));
  Tensor f = sigmoid(gate_pre(layer.gates[1]));
  Tensor g = mtl::tanh(gate_pre(layer.gates[2]));
  Tensor o = sigmoid(gate_pre(layer.gates[3]));
  Tensor c_next = add(mul(f, c_prev), mul(i, g));
  Tensor h_next = mul(o, mtl::tanh(c_next));
  return {h_next, c_next};
}

std::vector<Tensor> RecurrentStack::forward(const std::vector<Tensor>& frames,
                                            HiddenCarry& carry, bool training,
                                            Rng& rng) const {
  if (carry.h.size() != layers_.size())
    throw ContractError("recurrent carry does not match the layer count");
  std::vector<Tensor> current = frames;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& layer = layers_[li];
    Tensor h = Tensor::from_values({1, hidden_dim_}, carry.h[li]);
    Tensor c;
    if (kind_ == EncoderKind::LSTM)
      c = Tensor::from_values({1, hidden_dim_}, carry.c[li]);
    std::vector<Tensor> next;
    next.reserve(current.size());
    for (const Tensor& x : current) {
      if (x.cols() != layer.in_dim)
        throw DimensionError("recurrent layer expects " + std::to_string(layer.in_dim) +
                             " features, got " + shape_str(x.shape()));
      if (kind_ == EncoderKind::GRU) {
        h = step_gru(layer, x, h);
      } else {
        auto [h2, c2] = step_lstm(layer, x, h, c);
        h = h2;
        c = c2;
      }
      next.push_back(h);
    }
    carry.h[li] = h.values();
    if (kind_ == EncoderKind::LSTM) carry.c[li] = c.values();
    // Inter-layer dropout, not applied after the final layer.
    if (li + 1 < layers_.size() && dropout_ > 0.0 && training)
      for (Tensor& t : next) t = dropout(t, dropout_, training, rng);
    current = std::move(next);
  }
  return current;
}

// ---- TransformerStack ----

std::vector<double> sinusoidal_positions(std::size_t frames, std::size_t model_dim) {
  std::vector<double> table(frames * model_dim, 0.0);
  for (std::size_t pos = 0; pos < frames; ++pos)
    for (std::size_t i = 0; i < model_dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(model_dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      table[pos * model_dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return table;
}

TransformerFrontend::TransformerFrontend(std::size_t input_dim, std::size_t model_dim,
                                         bool positional_encoding, double dropout,
                                         ParamStore& params, const std::string& prefix,
                                         Rng& rng)
    : positional_encoding_(positional_encoding), dropout_(dropout), model_dim_(model_dim) {
  w_ = params.add(prefix + ".w", {input_dim, model_dim}, ParamStore::Init::kXavierUniform,
                  rng);
  b_ = params.add(prefix + ".b", {model_dim}, ParamStore::Init::kZeros, rng);
}

Tensor TransformerFrontend::forward(const Tensor& features, bool training,
                                    Rng& rng) const {
  Tensor x = add(matmul(features, w_), b_);
  if (positional_encoding_) {
    Tensor pe = Tensor::from_values({features.rows(), model_dim_},
                                    sinusoidal_positions(features.rows(), model_dim_));
    x = add(x, pe);
  }
  if (dropout_ > 0.0 && training) x = dropout(x, dropout_, training, rng);
  return x;
}

TransformerStack::TransformerStack(std::size_t model_dim, std::size_t layers,
                                   std::size_t heads, std::size_t ffn_dim,
                                   double dropout, bool final_norm, ParamStore& params,
                                   const std::string& prefix, Rng& rng)
    : model_dim_(model_dim), head_dim_(model_dim / heads), dropout_(dropout) {
  if (heads == 0 || model_dim % heads != 0)
    throw ConfigError("transformer: model dim not divisible by head count");
  blocks_.resize(layers);
  for (std::size_t li = 0; li < layers; ++li) {
    Block& block = blocks_[li];
    const std::string base = prefix + ".b" + std::to_string(li) + ".";
    for (std::size_t hi = 0; hi < heads; ++hi) {
      Block::HeadProj proj;
      const std::string hb = base + "h" + std::to_string(hi) + ".";
      proj.wq = params.add(hb + "wq", {model_dim, head_dim_},
                           ParamStore::Init::kXavierUniform, rng);
      proj.bq = params.add(hb + "bq", {head_dim_}, ParamStore::Init::kZeros, rng);
      proj.wk = params.add(hb + "wk", {model_dim, head_dim_},
                           ParamStore::Init::kXavierUniform, rng);
      proj.bk = params.add(hb + "bk", {head_dim_}, ParamStore::Init::kZeros, rng);
      proj.wv = params.add(hb + "wv", {model_dim, head_dim_},
                           ParamStore::Init::kXavierUniform, rng);
      proj.bv = params.add(hb + "bv", {head_dim_}, ParamStore::Init::kZeros, rng);
      block.heads.push_back(proj);
    }
    block.wo = params.add(base + "wo", {model_dim, model_dim},
                          ParamStore::Init::kXavierUniform, rng);
    block.bo = params.add(base + "bo", {model_dim}, ParamStore::Init::kZeros, rng);
    block.ln1_gain = params.add(base + "ln1.gain", {model_dim}, ParamStore::Init::kOnes, rng);
    block.ln1_bias = params.add(base + "ln1.bias", {model_dim}, ParamStore::Init::kZeros, rng);
    block.ln2_gain = params.add(base + "ln2.gain", {model_dim}, ParamStore::Init::kOnes, rng);
    block.ln2_bias = params.add(base + "ln2.bias", {model_dim}, ParamStore::Init::kZeros, rng);
    block.w1 = params.add(base + "ffn.w1", {model_dim, ffn_dim},
                          ParamStore::Init::kXavierUniform, rng);
    block.b1 = params.add(base + "ffn.b1", {ffn_dim}, ParamStore::Init::kZeros, rng);
    block.w2 = params.add(base + "ffn.w2", {ffn_dim, model_dim},
                          ParamStore::Init::kXavierUniform, rng);
    block.b2 = params.add(base + "ffn.b2", {model_dim}, ParamStore::Init::kZeros, rng);
  }
  if (final_norm) {
    final_gain_ = params.add(prefix + ".final.gain", {model_dim}, ParamStore::Init::kOnes, rng);
    final_bias_ = params.add(prefix + ".final.bias", {model_dim}, ParamStore::Init::kZeros, rng);
  }
}

Tensor TransformerStack::attention(const Block& block, const Tensor& x, bool training,
                                   Rng& rng) const {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(block.heads.size());
  for (const Block::HeadProj& proj : block.heads) {
    Tensor q = add(matmul(x, proj.wq), proj.bq);
    Tensor k = add(matmul(x, proj.wk), proj.bk);
    Tensor v = add(matmul(x, proj.wv), proj.bv);
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
    Tensor weights = softmax(scores, 1);
    head_outputs.push_back(matmul(weights, v));
  }
  Tensor merged = head_outputs.size() == 1 ? head_outputs[0] : concat(head_outputs, 1);
  Tensor out = add(matmul(merged, block.wo), block.bo);
  if (dropout_ > 0.0 && training) out = dropout(out, dropout_, training, rng);
  return out;
}

Tensor TransformerStack::forward(const Tensor& x_in, bool training, Rng& rng) const {
  Tensor x = x_in;
  for (const Block& block : blocks_) {
    Tensor normed = layer_norm(x, block.ln1_gain, block.ln1_bias);
    x = add(x, attention(block, normed, training, rng));
    Tensor normed2 = layer_norm(x, block.ln2_gain, block.ln2_bias);
    Tensor hidden = relu(add(matmul(normed2, block.w1), block.b1));
    Tensor ffn = add(matmul(hidden, block.w2), block.b2);
    if (dropout_ > 0.0 && training) ffn = dropout(ffn, dropout_, training, rng);
    x = add(x, ffn);
  }
  if (final_gain_.defined()) x = layer_norm(x, final_gain_, final_bias_);
  return x;
}

// ---- TemporalEncoder ----

std::vector<Tensor> rows_as_frames(const Tensor& matrix) {
  const std::size_t rows = matrix.rows(), cols = matrix.cols();
  std::vector<Tensor> frames;
  frames.reserve(rows);
  const std::vector<double>& v = matrix.values();
  for (std::size_t r = 0; r < rows; ++r)
    frames.push_back(Tensor::from_values(
        {1, cols}, std::vector<double>(v.begin() + r * cols, v.begin() + (r + 1) * cols)));
  return frames;
}

TemporalEncoder::TemporalEncoder(const EncoderConfig& config, ParamStore& params,
                                 const std::string& prefix, Rng& rng)
    : config_(config) {
  config.validate();
  if (config.kind == EncoderKind::TRM) {
    frontend_ = TransformerFrontend(config.input_dim, config.hidden_dim,
                                    config.positional_encoding, config.dropout, params,
                                    prefix + ".in", rng);
    transformer_ = TransformerStack(config.hidden_dim, config.layers, config.heads,
                                    config.ffn_dim, config.dropout, /*final_norm=*/true,
                                    params, prefix, rng);
  } else {
    recurrent_ = RecurrentStack(config.kind, config.input_dim, config.hidden_dim,
                                config.layers, config.dropout, params, prefix, rng);
  }
}

HiddenCarry TemporalEncoder::make_carry() const {
  if (config_.kind == EncoderKind::TRM) return {};
  return recurrent_.make_carry();
}

Tensor TemporalEncoder::forward(const Tensor& features, HiddenCarry& carry,
                                bool training, Rng& rng) const {
  if (features.cols() != config_.input_dim)
    throw DimensionError("encoder expects " + std::to_string(config_.input_dim) +
                         "-dim features, got " + shape_str(features.shape()));
  if (config_.kind == EncoderKind::TRM) {
    Tensor x = frontend_.forward(features, training, rng);
    return transformer_.forward(x, training, rng);
  }
  std::vector<Tensor> frames = rows_as_frames(features);
  std::vector<Tensor> outputs = recurrent_.forward(frames, carry, training, rng);
  return concat(outputs, 0);
}

}  // namespace mtl
