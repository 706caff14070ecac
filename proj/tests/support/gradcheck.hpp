#pragma once

// Central finite-difference gradient oracle. Independent of the backward
// implementation: it only nudges parameter values and re-runs the forward
// closure. The closure must be deterministic (rebuild any RNG inside it).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::testing {

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0.0;
  std::string worst_where;
};

inline double central_difference(const std::function<double()>& f, double& slot,
                                 double step) {
  const double saved = slot;
  slot = saved + step;
  const double hi = f();
  slot = saved - step;
  const double lo = f();
  slot = saved;
  return (hi - lo) / (2.0 * step);
}

// Compares backward() gradients on `loss_fn` against central differences for
// every element of every tensor in `params`.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn,
                                 const std::vector<Tensor>& params,
                                 double rel_tol = 1e-4, double abs_tol = 1e-8,
                                 double step = 1e-5) {
  for (const Tensor& p : params) {
    Tensor mutable_p = p;
    mutable_p.zero_grad();
  }
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  auto eval = [&]() { return loss_fn().item(); };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::vector<double>& values = p.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double numeric = central_difference(eval, values[i], step);
      const double a = analytic[pi][i];
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = diff / std::max(scale, 1e-12);
      if (diff > abs_tol && rel > rel_tol) {
        result.ok = false;
        if (rel > result.worst_rel) {
          result.worst_rel = rel;
          result.worst_where = "param " + std::to_string(pi) + "[" + std::to_string(i) +
                               "]: analytic " + std::to_string(a) + " vs numeric " +
                               std::to_string(numeric);
        }
      }
    }
  }
  return result;
}

}  // namespace mtl::testing
