#include "hydroode/odeint.hpp"

#include <stdexcept>

#include "hydroode/ops.hpp"

namespace hode {

void TimeGrid::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("time grid needs dt > 0, got " + std::to_string(dt));
  if (steps == 0) throw std::invalid_argument("time grid needs at least one step");
}

SolverKind parse_solver(const std::string& name) {
  if (name == "euler") return SolverKind::kEuler;
  if (name == "rk4") return SolverKind::kRk4;
  throw std::invalid_argument("unknown solver '" + name + "' (expected euler or rk4)");
}

std::string to_string(SolverKind s) { return s == SolverKind::kEuler ? "euler" : "rk4"; }

namespace {

Shape row_shape(const Tensor& controls) { return Shape(controls.shape().begin() + 1, controls.shape().end()); }

void check_controls(const Tensor& controls, const TimeGrid& grid, std::size_t substeps) {
  grid.validate();
  if (substeps == 0) throw std::invalid_argument("substeps must be >= 1");
  if (controls.rank() == 0 || controls.dim(0) != grid.steps) {
    throw DimensionError("control sequence of shape " + shape_string(controls.shape()) + " does not match " +
                         std::to_string(grid.steps) + " grid steps");
  }
}

Tensor eval(const VectorField& f, const Tensor& state, std::size_t step, double t) {
  Tensor d = f(state, step, t);
  if (d.shape() != state.shape()) {
    throw DimensionError("vector field returned shape " + shape_string(d.shape()) + " for state shape " +
                         shape_string(state.shape()));
  }
  return d;
}

Tensor euler_step(const VectorField& f, const Tensor& y, std::size_t step, double t, double h) {
  return add(y, scale(eval(f, y, step, t), h));
}

Tensor rk4_step(const VectorField& f, const Tensor& y, std::size_t step, double t, double h) {
  const Tensor k1 = eval(f, y, step, t);
  const Tensor k2 = eval(f, add(y, scale(k1, h / 2)), step, t + h / 2);
  const Tensor k3 = eval(f, add(y, scale(k2, h / 2)), step, t + h / 2);
  const Tensor k4 = eval(f, add(y, scale(k3, h)), step, t + h);
  const Tensor incr = add(add(k1, scale(add(k2, k3), 2.0)), k4);
  return add(y, scale(incr, h / 6));
}

Tensor run(SolverKind solver, const Tensor& initial, const Kernel& kernel, const TimeGrid& grid,
           const Tensor& controls, std::size_t substeps) {
  check_controls(controls, grid, substeps);
  const VectorField f = kernel.bind(controls);
  const double h = grid.dt / static_cast<double>(substeps);
  Tensor state = initial;
  std::vector<Tensor> states;
  states.reserve(grid.steps);
  for (std::size_t i = 0; i < grid.steps; ++i) {
    for (std::size_t j = 0; j < substeps; ++j) {
      const double t = grid.time(i) + static_cast<double>(j) * h;
      state = solver == SolverKind::kEuler ? euler_step(f, state, i, t, h) : rk4_step(f, state, i, t, h);
    }
    states.push_back(state);
  }
  return stack(states);
}

// f and its vector-Jacobian products at one point, computed on a private graph.
struct LocalVjp {
  std::vector<double> f;
  std::vector<double> a_dstate;
  std::vector<std::vector<double>> a_dparams;
  std::vector<double> a_dcontrol;
};

LocalVjp local_vjp(const Kernel& kernel, const std::vector<Tensor>& params, const Shape& state_shape,
                   const std::vector<double>& state, const Shape& control_shape, const double* control, double t,
                   const std::vector<double>& a) {
  const Tensor s(state_shape, state, true);
  const std::size_t control_size = shape_numel(control_shape) / control_shape.front();
  const Tensor u(control_shape, std::vector<double>(control, control + control_size), true);
  const VectorField field = kernel.bind(u);
  const Tensor y = eval(field, s, 0, t);
  LocalVjp out;
  out.f = y.data();
  const GradientMap g = backward(y, a);
  out.a_dstate = g.get(s);
  out.a_dcontrol = g.get(u);
  out.a_dparams.reserve(params.size());
  for (const auto& p : params) out.a_dparams.push_back(g.get(p));
  return out;
}

void axpy(std::vector<double>& y, double alpha, const std::vector<double>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

std::vector<double> plus_scaled(const std::vector<double>& y, double alpha, const std::vector<double>& x) {
  std::vector<double> r = y;
  axpy(r, alpha, x);
  return r;
}

}  // namespace

VectorField FunctionKernel::bind(const Tensor& controls) const {
  const Shape row = row_shape(controls);
  return [fn = fn_, controls, row](const Tensor& state, std::size_t step, double t) {
    return fn(state, reshape(slice(controls, 0, step, 1), row), t);
  };
}

Tensor euler_integrate(const Tensor& initial, const Kernel& kernel, const TimeGrid& grid, const Tensor& controls,
                       std::size_t substeps) {
  return run(SolverKind::kEuler, initial, kernel, grid, controls, substeps);
}

Tensor rk4_integrate(const Tensor& initial, const Kernel& kernel, const TimeGrid& grid, const Tensor& controls,
                     std::size_t substeps) {
  return run(SolverKind::kRk4, initial, kernel, grid, controls, substeps);
}

Tensor integrate(SolverKind solver, const Tensor& initial, const Kernel& kernel, const TimeGrid& grid,
                 const Tensor& controls, std::size_t substeps) {
  return run(solver, initial, kernel, grid, controls, substeps);
}

AdjointGradients adjoint_backward(SolverKind solver, const Tensor& trajectory, const Tensor& initial,
                                  const Kernel& kernel, const TimeGrid& grid, const Tensor& controls,
                                  const Tensor& dl_dtrajectory, std::size_t substeps) {
  check_controls(controls, grid, substeps);
  if (trajectory.rank() == 0 || trajectory.dim(0) != grid.steps) {
    throw DimensionError("trajectory of shape " + shape_string(trajectory.shape()) + " does not match " +
                         std::to_string(grid.steps) + " grid steps");
  }
  if (dl_dtrajectory.shape() != trajectory.shape()) {
    throw DimensionError("loss gradient shape " + shape_string(dl_dtrajectory.shape()) + " differs from trajectory " +
                         shape_string(trajectory.shape()));
  }
  const Shape state_shape = initial.shape();
  const std::size_t n = initial.size();
  if (trajectory.size() != grid.steps * n) {
    throw DimensionError("trajectory of shape " + shape_string(trajectory.shape()) + " does not hold states of shape " +
                         shape_string(state_shape));
  }

  const std::vector<Tensor> params = kernel.parameters();
  Shape control_shape = row_shape(controls);
  control_shape.insert(control_shape.begin(), 1);
  const std::size_t control_size = shape_numel(control_shape);
  const double h = grid.dt / static_cast<double>(substeps);

  AdjointGradients out;
  out.params.reserve(params.size());
  for (const auto& p : params) out.params.emplace_back(p.size(), 0.0);
  out.controls.assign(controls.size(), 0.0);
  std::vector<double> a(n, 0.0);

  // Forward re-evaluation within one interval, off the graph.
  const VectorField f_all = kernel.bind(controls.detach());
  auto forward_step = [&](const std::vector<double>& y, std::size_t step, double t) {
    const Tensor s(state_shape, y);
    const Tensor next = solver == SolverKind::kEuler ? euler_step(f_all, s, step, t, h) : rk4_step(f_all, s, step, t, h);
    return next.data();
  };

  const auto& traj = trajectory.data();
  const auto& dl = dl_dtrajectory.data();
  for (std::size_t i = grid.steps; i-- > 0;) {
    for (std::size_t k = 0; k < n; ++k) a[k] += dl[i * n + k];

    const double* control = controls.data().data() + i * control_size;
    std::vector<std::vector<double>> sub(substeps + 1);
    sub[0] = i == 0 ? initial.data() : std::vector<double>(traj.begin() + (i - 1) * n, traj.begin() + i * n);
    for (std::size_t j = 0; j < substeps; ++j) sub[j + 1] = forward_step(sub[j], i, grid.time(i) + j * h);

    double* gu = out.controls.data() + i * control_size;
    for (std::size_t j = substeps; j-- > 0;) {
      const double t = grid.time(i) + static_cast<double>(j) * h;
      if (solver == SolverKind::kEuler) {
        const LocalVjp v = local_vjp(kernel, params, state_shape, sub[j], control_shape, control, t, a);
        axpy(a, h, v.a_dstate);
        for (std::size_t p = 0; p < params.size(); ++p) axpy(out.params[p], h, v.a_dparams[p]);
        for (std::size_t c = 0; c < control_size; ++c) gu[c] += h * v.a_dcontrol[c];
        continue;
      }
      // Classic RK4 on the augmented system, stepping from t + h back to t. In
      // reversed time the state moves by −f and the adjoint by +aᵀ∂f/∂F.
      const double te = t + h;
      const std::vector<double>& y_end = sub[j + 1];
      const LocalVjp k1 = local_vjp(kernel, params, state_shape, y_end, control_shape, control, te, a);
      const LocalVjp k2 = local_vjp(kernel, params, state_shape, plus_scaled(y_end, -h / 2, k1.f), control_shape,
                                    control, te - h / 2, plus_scaled(a, h / 2, k1.a_dstate));
      const LocalVjp k3 = local_vjp(kernel, params, state_shape, plus_scaled(y_end, -h / 2, k2.f), control_shape,
                                    control, te - h / 2, plus_scaled(a, h / 2, k2.a_dstate));
      const LocalVjp k4 = local_vjp(kernel, params, state_shape, plus_scaled(y_end, -h, k3.f), control_shape, control,
                                    t, plus_scaled(a, h, k3.a_dstate));
      const double w = h / 6.0;
      for (std::size_t k = 0; k < n; ++k) {
        a[k] += w * (k1.a_dstate[k] + 2.0 * k2.a_dstate[k] + 2.0 * k3.a_dstate[k] + k4.a_dstate[k]);
      }
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& g = out.params[p];
        for (std::size_t e = 0; e < g.size(); ++e) {
          g[e] += w * (k1.a_dparams[p][e] + 2.0 * k2.a_dparams[p][e] + 2.0 * k3.a_dparams[p][e] + k4.a_dparams[p][e]);
        }
      }
      for (std::size_t c = 0; c < control_size; ++c) {
        gu[c] += w * (k1.a_dcontrol[c] + 2.0 * k2.a_dcontrol[c] + 2.0 * k3.a_dcontrol[c] + k4.a_dcontrol[c]);
      }
    }
  }
  out.initial_state = std::move(a);
  return out;
}

}  // namespace hode
