#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hydroode/tensor.hpp"

namespace hode {

/// Uniform observation grid: t_i = t0 + i·dt for i = 0..steps.
struct TimeGrid {
  double t0 = 0.0;
  double dt = 0.0;
  std::size_t steps = 0;

  double time(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
  /// Throws std::invalid_argument unless dt > 0 and steps >= 1.
  void validate() const;
};

enum class SolverKind { kEuler, kRk4 };

SolverKind parse_solver(const std::string& name);
std::string to_string(SolverKind s);

/// f(state, step, t): the vector field with the control of observation interval
/// `step` already applied.
using VectorField = std::function<Tensor(const Tensor& state, std::size_t step, double t)>;

/// A parameterized vector field driven by a per-step control sequence.
class Kernel {
 public:
  virtual ~Kernel() = default;

  /// Binds a control sequence whose leading axis indexes observation intervals.
  virtual VectorField bind(const Tensor& controls) const = 0;

  /// Trainable tensors of the field; adjoint gradients are reported in this order.
  virtual std::vector<Tensor> parameters() const = 0;
};

/// Kernel from a plain function of (state, control row, t).
class FunctionKernel : public Kernel {
 public:
  using Fn = std::function<Tensor(const Tensor& state, const Tensor& control, double t)>;

  explicit FunctionKernel(Fn fn, std::vector<Tensor> params = {}) : fn_(std::move(fn)), params_(std::move(params)) {}

  VectorField bind(const Tensor& controls) const override;
  std::vector<Tensor> parameters() const override { return params_; }

 private:
  Fn fn_;
  std::vector<Tensor> params_;
};

// Both integrators hold control i constant over [t_i, t_{i+1}] (including all RK4
// stages), split that interval into `substeps` equal solver steps, and return the
// states at t_1..t_steps stacked on a new leading axis. The result stays on the graph.
Tensor euler_integrate(const Tensor& initial, const Kernel& kernel, const TimeGrid& grid, const Tensor& controls,
                       std::size_t substeps = 1);
Tensor rk4_integrate(const Tensor& initial, const Kernel& kernel, const TimeGrid& grid, const Tensor& controls,
                     std::size_t substeps = 1);
Tensor integrate(SolverKind solver, const Tensor& initial, const Kernel& kernel, const TimeGrid& grid,
                 const Tensor& controls, std::size_t substeps = 1);

struct AdjointGradients {
  std::vector<std::vector<double>> params;  // aligned with kernel.parameters()
  std::vector<double> initial_state;        // dL/dF(t0)
  std::vector<double> controls;             // dL/dcontrols, same layout as controls
};

/// Gradients of a loss L(trajectory) by integrating the adjoint a(t) = ∂L/∂F(t) backward
/// in time, adding ∂L/∂F_i at each observation.
///
/// Euler uses the first-order scheme a ← a + h·aᵀ∂f/∂F evaluated at the stored left
/// state. RK4 integrates the augmented system (F, a, ∫aᵀ∂f/∂θ, ∫aᵀ∂f/∂u) backward over
/// each solver step, restarting F from the recomputed forward state at the step's end.
AdjointGradients adjoint_backward(SolverKind solver, const Tensor& trajectory, const Tensor& initial,
                                  const Kernel& kernel, const TimeGrid& grid, const Tensor& controls,
                                  const Tensor& dl_dtrajectory, std::size_t substeps = 1);

}  // namespace hode
