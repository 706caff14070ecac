#include "mtl/adam.hpp"

#include <cmath>

namespace mtl {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.defined() || !p.requires_grad())
      throw ContractError("Adam: every registered parameter needs a gradient slot");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    std::vector<double>& g = p.grad();
    if (g.size() != p.numel())
      throw ContractError("Adam: gradient missing on a registered parameter");
    std::vector<double>& m = m_[pi];
    std::vector<double>& v = v_[pi];
    std::vector<double>& theta = p.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      g[i] = 0.0;
    }
  }
}

}  // namespace mtl
