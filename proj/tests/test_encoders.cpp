#include <doctest.h>

#include <cmath>

#include "mtl/encoders.hpp"
#include "support/gradcheck.hpp"

using namespace mtl;
using mtl::testing::gradcheck;

namespace {

EncoderConfig toy_config(EncoderKind kind, std::size_t input_dim, std::size_t hidden,
                         std::size_t layers) {
  EncoderConfig config;
  config.kind = kind;
  config.input_dim = input_dim;
  config.hidden_dim = hidden;
  config.layers = layers;
  config.heads = 2;
  config.ffn_dim = hidden;
  config.dropout = 0.0;
  return config;
}

Tensor random_features(std::size_t frames, std::size_t dim, Rng& rng) {
  std::vector<double> values(frames * dim);
  for (double& v : values) v = rng.uniform(-1, 1);
  return Tensor::from_values({frames, dim}, std::move(values));
}

void zero_params(ParamStore& params) {
  for (const auto& [name, tensor] : params.entries()) {
    Tensor handle = tensor;
    std::fill(handle.values().begin(), handle.values().end(), 0.0);
  }
}

}  // namespace

TEST_CASE("zero weights and zero carry give zero recurrent outputs") {
  for (EncoderKind kind : {EncoderKind::GRU, EncoderKind::LSTM}) {
    ParamStore params;
    Rng init(1);
    TemporalEncoder encoder(toy_config(kind, 3, 4, 2), params, "enc", init);
    zero_params(params);
    HiddenCarry carry = encoder.make_carry();
    Rng rng(2);
    Tensor features = Tensor::zeros({5, 3});
    Tensor out = encoder.forward(features, carry, false, rng);
    for (double v : out.values()) CHECK(v == 0.0);
    for (const auto& h : carry.h)
      for (double v : h) CHECK(v == 0.0);
  }
}

TEST_CASE("streaming equivalence: segmented recurrent pass equals one pass") {
  for (EncoderKind kind : {EncoderKind::GRU, EncoderKind::LSTM}) {
    ParamStore params;
    Rng init(11);
    TemporalEncoder encoder(toy_config(kind, 3, 6, 2), params, "enc", init);
    Rng data_rng(5);
    const std::size_t frames = 23;
    Tensor features = random_features(frames, 3, data_rng);

    HiddenCarry whole_carry = encoder.make_carry();
    Rng fwd_rng(0);
    Tensor whole = encoder.forward(features, whole_carry, false, fwd_rng);

    for (std::size_t split : {1u, 7u, 10u, 22u}) {
      HiddenCarry carry = encoder.make_carry();
      std::vector<double> first(features.values().begin(),
                                features.values().begin() + split * 3);
      std::vector<double> second(features.values().begin() + split * 3,
                                 features.values().end());
      Tensor out1 = encoder.forward(Tensor::from_values({split, 3}, first), carry,
                                    false, fwd_rng);
      Tensor out2 = encoder.forward(Tensor::from_values({frames - split, 3}, second),
                                    carry, false, fwd_rng);
      for (std::size_t i = 0; i < split * 6; ++i)
        CHECK(std::abs(out1.values()[i] - whole.values()[i]) < 1e-9);
      for (std::size_t i = 0; i < (frames - split) * 6; ++i)
        CHECK(std::abs(out2.values()[i] - whole.values()[split * 6 + i]) < 1e-9);
    }
  }
}

TEST_CASE("recurrent parameter gradients match finite differences") {
  for (EncoderKind kind : {EncoderKind::GRU, EncoderKind::LSTM}) {
    ParamStore params;
    Rng init(21);
    TemporalEncoder encoder(toy_config(kind, 3, 4, 2), params, "enc", init);
    Rng data_rng(31);
    Tensor features = random_features(6, 3, data_rng);
    auto loss = [&]() {
      HiddenCarry carry = encoder.make_carry();
      Rng rng(0);
      Tensor out = encoder.forward(features, carry, false, rng);
      return sum(mul(out, out));
    };
    auto result = gradcheck(loss, params.tensors());
    CHECK_MESSAGE(result.ok, result.worst_where);
  }
}

TEST_CASE("carry crosses segments: second segment differs from a cold start") {
  ParamStore params;
  Rng init(3);
  TemporalEncoder encoder(toy_config(EncoderKind::GRU, 2, 4, 1), params, "enc", init);
  Rng data_rng(4);
  Tensor seg = random_features(4, 2, data_rng);
  Rng fwd(0);
  HiddenCarry warm = encoder.make_carry();
  (void)encoder.forward(seg, warm, false, fwd);
  Tensor with_carry = encoder.forward(seg, warm, false, fwd);
  HiddenCarry cold = encoder.make_carry();
  Tensor without = encoder.forward(seg, cold, false, fwd);
  bool identical = true;
  for (std::size_t i = 0; i < with_carry.numel(); ++i)
    identical = identical && with_carry.values()[i] == without.values()[i];
  CHECK_FALSE(identical);
}

TEST_CASE("transformer keeps per-frame output counts") {
  ParamStore params;
  Rng init(41);
  EncoderConfig config = toy_config(EncoderKind::TRM, 5, 8, 2);
  TemporalEncoder encoder(config, params, "enc", init);
  Rng data_rng(42);
  for (std::size_t frames : {1u, 3u, 9u}) {
    Tensor features = random_features(frames, 5, data_rng);
    HiddenCarry carry = encoder.make_carry();
    Rng rng(0);
    Tensor out = encoder.forward(features, carry, false, rng);
    CHECK(out.shape() == Shape{frames, 8});
  }
}

TEST_CASE("zero-PE transformer is permutation-equivariant") {
  ParamStore params;
  Rng init(51);
  EncoderConfig config = toy_config(EncoderKind::TRM, 4, 8, 2);
  config.positional_encoding = false;
  TemporalEncoder encoder(config, params, "enc", init);
  Rng data_rng(52);
  const std::size_t frames = 6;
  Tensor features = random_features(frames, 4, data_rng);
  HiddenCarry carry = encoder.make_carry();
  Rng rng(0);
  Tensor out = encoder.forward(features, carry, false, rng);

  // Reverse the frames; outputs must follow within 1e-9.
  std::vector<double> reversed(frames * 4);
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      reversed[i * 4 + c] = features.values()[(frames - 1 - i) * 4 + c];
  Tensor out_rev = encoder.forward(Tensor::from_values({frames, 4}, reversed), carry,
                                   false, rng);
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(std::abs(out_rev.at(i, c) - out.at(frames - 1 - i, c)) < 1e-9);
}

TEST_CASE("positional encoding breaks permutation equivariance") {
  ParamStore params;
  Rng init(53);
  TemporalEncoder encoder(toy_config(EncoderKind::TRM, 4, 8, 1), params, "enc", init);
  Rng data_rng(54);
  const std::size_t frames = 5;
  Tensor features = random_features(frames, 4, data_rng);
  HiddenCarry carry = encoder.make_carry();
  Rng rng(0);
  Tensor out = encoder.forward(features, carry, false, rng);
  std::vector<double> reversed(frames * 4);
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      reversed[i * 4 + c] = features.values()[(frames - 1 - i) * 4 + c];
  Tensor out_rev = encoder.forward(Tensor::from_values({frames, 4}, reversed), carry,
                                   false, rng);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t c = 0; c < 8; ++c)
      max_diff = std::max(max_diff,
                          std::abs(out_rev.at(i, c) - out.at(frames - 1 - i, c)));
  CHECK(max_diff > 1e-6);
}

TEST_CASE("transformer gradients match finite differences on a toy block") {
  ParamStore params;
  Rng init(61);
  TemporalEncoder encoder(toy_config(EncoderKind::TRM, 4, 8, 1), params, "enc", init);
  Rng data_rng(62);
  Tensor features = random_features(4, 4, data_rng);
  auto loss = [&]() {
    HiddenCarry carry = encoder.make_carry();
    Rng rng(0);
    Tensor out = encoder.forward(features, carry, false, rng);
    return sum(mul(out, out));
  };
  auto result = gradcheck(loss, params.tensors());
  CHECK_MESSAGE(result.ok, result.worst_where);
}

TEST_CASE("fixed seed means bit-identical parameters and outputs") {
  auto build_and_run = [](std::uint64_t seed) {
    ParamStore params;
    Rng init(seed);
    TemporalEncoder encoder(toy_config(EncoderKind::GRU, 3, 5, 2), params, "enc", init);
    Rng data_rng(7);
    Tensor features = random_features(8, 3, data_rng);
    HiddenCarry carry = encoder.make_carry();
    Rng dropout_rng(9);
    EncoderConfig with_dropout = encoder.config();
    (void)with_dropout;
    return encoder.forward(features, carry, true, dropout_rng).values();
  };
  CHECK(build_and_run(77) == build_and_run(77));
}

TEST_CASE("sinusoidal position table has unit-amplitude alternating waves") {
  std::vector<double> table = sinusoidal_positions(3, 4);
  CHECK(table[0] == doctest::Approx(0.0));  // sin(0)
  CHECK(table[1] == doctest::Approx(1.0));  // cos(0)
  for (double v : table) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
}

TEST_CASE("encoder config validation") {
  EncoderConfig bad = toy_config(EncoderKind::TRM, 4, 9, 1);
  bad.heads = 2;  // 9 % 2 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  EncoderConfig none = toy_config(EncoderKind::GRU, 0, 4, 1);
  CHECK_THROWS_AS(none.validate(), ConfigError);
}
