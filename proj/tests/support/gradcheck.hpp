// SPDX-License-Identifier: Apache-2.0
// Central finite-difference gradient checker used by the unit and acceptance
// suites. Independent of the backward implementations it checks: it only
// perturbs leaf values and re-evaluates the forward pass.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tds/tensor.hpp"

namespace tds::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // name of the tensor with the largest error
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Compares backward() against (f(p + h) - f(p - h)) / 2h for every element
/// of every tensor in `leaves`. The error of one tensor is
/// |analytic - numeric| / max(|analytic| + |numeric|, 1e-8) in L2 norm.
inline GradCheckResult gradient_check(const std::function<Tensor()>& loss_fn,
                                      NamedTensors leaves, double h = 1e-5) {
  for (auto& [name, t] : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss_fn().backward();

  GradCheckResult result;
  for (auto& [name, t] : leaves) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (!t.grad().empty()) analytic.assign(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.numel());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      NoGradGuard guard;
      values[i] = orig + h;
      const double fp = loss_fn().item();
      values[i] = orig - h;
      const double fm = loss_fn().item();
      values[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double rel = std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-8);
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = name;
    }
  }
  return result;
}

}  // namespace tds::testing
