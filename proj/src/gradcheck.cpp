#include "hydroode/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hode {

GradCheckResult grad_check(const ScalarFunction& fn, std::vector<Tensor> params, double epsilon) {
  for (const auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) throw GraphError("grad_check parameters must be leaves requiring grad");
  }
  GradCheckResult result;
  const Tensor loss = fn(params);
  const GradientMap grads = backward(loss);

  auto evaluate = [&] { return fn(params).detach().item(); };
  for (std::size_t t = 0; t < params.size(); ++t) {
    const std::vector<double> analytic = grads.get(params[t]);
    auto values = params[t].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double up = evaluate();
      values[i] = saved - epsilon;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      ++result.entries_checked;
      if (err > result.max_relative_error || !std::isfinite(err)) {
        result.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_tensor = t;
        result.worst_entry = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace hode
