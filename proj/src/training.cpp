#include "hydroode/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "hydroode/ops.hpp"
#include "hydroode/parallel.hpp"

namespace hode {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
  if (grad_clip_norm < 0.0) throw std::invalid_argument("grad_clip_norm must be nonnegative");
  if (early_stop_patience == 0) throw std::invalid_argument("early_stop_patience must be positive");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"max_steps", c.max_steps},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"grad_clip_norm", c.grad_clip_norm},
                     {"early_stop_patience", c.early_stop_patience},
                     {"seed", c.seed},
                     {"threads", c.threads},
                     {"fit_normalization", c.fit_normalization}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{"learning_rate",  "batch_size",          "max_epochs", "max_steps",
                                           "beta1",          "beta2",               "epsilon",    "grad_clip_norm",
                                           "early_stop_patience", "seed",           "threads",    "fit_normalization"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown training config key '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("max_steps", c.max_steps);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("epsilon", c.epsilon);
  get("grad_clip_norm", c.grad_clip_norm);
  get("early_stop_patience", c.early_stop_patience);
  get("seed", c.seed);
  get("threads", c.threads);
  get("fit_normalization", c.fit_normalization);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{
      {"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"wall_ms", r.wall_ms}, {"lr", r.lr}};
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss shapes differ: " + shape_string(pred.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

void adam_step(const std::vector<Tensor>& params, std::vector<std::vector<double>> grads, AdamState& state,
               const TrainConfig& c, const std::vector<std::string>& names) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].size()) throw DimensionError("adam_step: gradient shape mismatch");
    for (double g : grads[p]) {
      if (!std::isfinite(g)) {
        const std::string name = p < names.size() ? names[p] : "#" + std::to_string(p);
        throw NonFiniteGradientError("non-finite gradient for parameter '" + name + "'");
      }
    }
  }
  clip_global_norm(grads, c.grad_clip_norm);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p];
    auto w = param.mutable_values();
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      w[i] -= c.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + c.epsilon);
    }
  }
}

void fit_normalization(ForecastModel& model, const Dataset& train) {
  if (train.trajectories.empty()) throw std::invalid_argument("cannot fit normalization on an empty training set");
  const std::size_t n = model.config.n_in, f = model.config.f_out;
  const auto& first = train.trajectories.front();
  if (first.n != n || first.f != f) {
    throw DimensionError("dataset has n=" + std::to_string(first.n) + ", f=" + std::to_string(first.f) +
                         " but the model expects n_in=" + std::to_string(n) + ", f_out=" + std::to_string(f));
  }
  auto moments = [](std::size_t dims, auto&& visit) {
    std::vector<double> sum(dims, 0.0), sq(dims, 0.0);
    double count = 0.0;
    visit([&](std::size_t k, double v) { sum[k] += v; });
    visit([&](std::size_t k, double) {
      if (k == 0) count += 1.0;
    });
    std::vector<double> mean(dims), sd(dims);
    for (std::size_t k = 0; k < dims; ++k) mean[k] = sum[k] / count;
    visit([&](std::size_t k, double v) { sq[k] += (v - mean[k]) * (v - mean[k]); });
    for (std::size_t k = 0; k < dims; ++k) {
      sd[k] = std::sqrt(sq[k] / count);
      if (!(sd[k] > 1e-12)) sd[k] = 1.0;
    }
    return std::pair{mean, sd};
  };
  const auto [x_mean, x_std] = moments(n, [&](auto&& fn) {
    for (const auto& t : train.trajectories)
      for (std::size_t i = 1; i <= t.length; ++i)
        for (std::size_t k = 0; k < n; ++k) fn(k, t.x[i * n + k]);
  });
  const auto [f_mean, f_std] = moments(f, [&](auto&& fn) {
    for (const auto& t : train.trajectories)
      for (std::size_t i = 0; i <= t.length; ++i)
        for (std::size_t k = 0; k < f; ++k) fn(k, t.forces[i * f + k]);
  });
  const auto [r_mean, r_std] = moments(f, [&](auto&& fn) {
    for (const auto& t : train.trajectories)
      for (std::size_t i = 1; i <= t.length; ++i)
        for (std::size_t k = 0; k < f; ++k) fn(k, (t.forces[i * f + k] - t.forces[(i - 1) * f + k]) / t.dt);
  });
  model.norm.x_mean = Tensor({n}, x_mean);
  model.norm.x_std = Tensor({n}, x_std);
  model.norm.force_mean = Tensor({f}, f_mean);
  model.norm.force_scale = Tensor({f}, f_std);
  model.norm.rate_scale = Tensor({f}, r_std);
}

namespace {

std::vector<std::vector<std::size_t>> chunks(std::size_t n, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += size) {
    out.emplace_back();
    for (std::size_t i = start; i < std::min(n, start + size); ++i) out.back().push_back(i);
  }
  return out;
}

Tensor rows(const Tensor& x, std::size_t start, std::size_t count) { return slice(x, 0, start, count).detach(); }

void check_compatible(const ForecastModel& model, const Dataset& d) {
  if (d.trajectories.empty()) return;
  const auto& t = d.trajectories.front();
  if (t.n != model.config.n_in || t.f != model.config.f_out) {
    throw DimensionError("dataset has n=" + std::to_string(t.n) + ", f=" + std::to_string(t.f) +
                         " but the model expects n_in=" + std::to_string(model.config.n_in) +
                         ", f_out=" + std::to_string(model.config.f_out));
  }
}

}  // namespace

Tensor predict_dataset(const ForecastModel& model, const Dataset& data, std::size_t batch_size, std::size_t threads) {
  check_compatible(model, data);
  const auto parts = chunks(data.trajectories.size(), batch_size);
  std::vector<Tensor> outs(parts.size());
  parallel_for(parts.size(), threads, [&](std::size_t c) {
    outs[c] = predict(model, data.inputs(parts[c]), data.initial(parts[c]), data.trajectories[parts[c][0]].t0).detach();
  });
  return outs.size() == 1 ? outs.front() : concat(outs, 0);
}

double dataset_loss(const ForecastModel& model, const Dataset& data, std::size_t batch_size, std::size_t threads) {
  return mse_loss(predict_dataset(model, data, batch_size, threads), data.targets()).item();
}

BatchGradient batch_gradient(const ForecastModel& model, const Tensor& x, const Tensor& f0, const Tensor& target,
                             std::size_t threads) {
  const std::size_t b = x.dim(0);
  const std::size_t parts = std::max<std::size_t>(1, std::min(threads, b));
  const auto params = model.params.tensors();
  const double total = static_cast<double>(target.size());
  std::vector<BatchGradient> partial(parts);
  parallel_for(parts, threads, [&](std::size_t c) {
    const std::size_t start = c * b / parts, count = (c + 1) * b / parts - start;
    const Tensor pred = predict(model, rows(x, start, count), rows(f0, start, count));
    // Each chunk contributes its share of the full-batch mean.
    const Tensor loss = scale(sum(square(sub(pred, rows(target, start, count)))), 1.0 / total);
    partial[c].loss = loss.item();
    const GradientMap g = backward(loss);
    for (const auto& p : params) partial[c].grads.push_back(g.get(p));
  });
  BatchGradient out = std::move(partial[0]);
  for (std::size_t c = 1; c < parts; ++c) {
    out.loss += partial[c].loss;
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t i = 0; i < out.grads[p].size(); ++i) out.grads[p][i] += partial[c].grads[p][i];
  }
  return out;
}

TrainReport train(ForecastModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                  const TrainOutputs& outputs) {
  config.validate();
  if (train_set.trajectories.empty()) throw std::invalid_argument("training set is empty");
  check_compatible(model, train_set);
  check_compatible(model, val_set);
  if (config.fit_normalization) fit_normalization(model, train_set);

  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  const auto params = model.params.tensors();
  std::vector<std::string> names;
  for (const auto& [name, t] : model.params.entries()) names.push_back(name);
  AdamState adam = AdamState::init(params);

  std::ofstream log;
  if (!outputs.log.empty()) {
    log.open(outputs.log, std::ios::trunc);
    if (!log) throw std::ios_base::failure("cannot write training log " + outputs.log.string());
  }

  const Tensor all_x = train_set.inputs(), all_f0 = train_set.initial(), all_y = train_set.targets();
  const bool has_val = !val_set.trajectories.empty();
  std::vector<std::vector<double>> best(params.size());
  auto snapshot = [&] {
    for (std::size_t p = 0; p < params.size(); ++p) best[p] = params[p].data();
  };
  auto restore = [&] {
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor t = params[p];
      auto dst = t.mutable_values();
      std::copy(best[p].begin(), best[p].end(), dst.begin());
    }
  };
  snapshot();

  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  report.checkpoint = outputs.checkpoint;
  std::vector<std::size_t> order(train_set.trajectories.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t since_best = 0;
  bool out_of_steps = false;

  for (std::size_t epoch = 1; epoch <= config.max_epochs && !out_of_steps; ++epoch) {
    std::mt19937_64 rng(derive_seed(config.seed, epoch, 3));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), start + config.batch_size)));
      auto pick = [&](const Tensor& all) {
        std::vector<Tensor> parts;
        for (auto i : idx) parts.push_back(slice(all, 0, i, 1));
        return concat(parts, 0);
      };
      BatchGradient bg = batch_gradient(model, pick(all_x), pick(all_f0), pick(all_y), config.threads);
      if (!std::isfinite(bg.loss)) {
        restore();
        throw DivergenceError("training loss became " + std::to_string(bg.loss) + " in epoch " +
                                  std::to_string(epoch) + "; last finite epoch " + std::to_string(epoch - 1),
                              epoch - 1);
      }
      try {
        adam_step(params, std::move(bg.grads), adam, config, names);
      } catch (const NonFiniteGradientError& e) {
        restore();
        throw DivergenceError(std::string(e.what()) + " in epoch " + std::to_string(epoch), epoch - 1);
      }
      report.step_losses.push_back(bg.loss);
      loss_sum += bg.loss * static_cast<double>(idx.size());
      seen += idx.size();
      ++report.steps;
      if (config.max_steps != 0 && report.steps >= config.max_steps) {
        out_of_steps = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_loss = has_val ? dataset_loss(model, val_set, config.batch_size, config.threads)
                           : dataset_loss(model, train_set, config.batch_size, config.threads);
    rec.lr = config.learning_rate;
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - started).count();
    if (!std::isfinite(rec.val_loss)) {
      restore();
      throw DivergenceError("validation loss became " + std::to_string(rec.val_loss) + " in epoch " +
                                std::to_string(epoch),
                            epoch - 1);
    }
    report.history.push_back(rec);
    if (log) log << nlohmann::json(rec).dump() << "\n" << std::flush;
    if (outputs.on_epoch) outputs.on_epoch(rec);

    if (rec.val_loss < report.best_val_loss) {
      report.best_val_loss = rec.val_loss;
      report.best_epoch = epoch;
      since_best = 0;
      snapshot();
      if (!outputs.checkpoint.empty()) checkpoint_save(model, outputs.checkpoint);
    } else if (++since_best >= config.early_stop_patience) {
      report.early_stopped = true;
      break;
    }
  }
  restore();
  report.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - started).count();
  return report;
}

}  // namespace hode
