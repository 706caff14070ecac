#pragma once

#include <cstddef>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Moment buffers mirror the
// parameter shapes; the step counter advances by exactly one per step().
// step() consumes the accumulated gradients and zeroes them afterwards.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  void step();

  std::size_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_count_ = 0;
  AdamConfig config_;
};

}  // namespace mtl
