#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hydroode/tensor.hpp"

namespace hode {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;  // index into the checked parameter list
  std::size_t worst_entry = 0;   // flat index inside that tensor
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor> params)>;

/// Compares reverse-mode gradients of `fn` against central differences.
///
/// Every entry of every tensor in `params` is perturbed by ±epsilon in place (and
/// restored). The error of one entry is |analytic − numeric| / max(1, |analytic|); the
/// result reports the worst entry. `params` must be leaves that require grad.
GradCheckResult grad_check(const ScalarFunction& fn, std::vector<Tensor> params, double epsilon = 1e-5);

namespace testing {

/// Scales the derivative used by tanh's backward pass. 1.0 restores correct behaviour;
/// anything else produces deliberately wrong gradients for negative-control tests.
void set_tanh_backward_scale(double factor);

}  // namespace testing

}  // namespace hode
