#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydroode/hydrodata.hpp"
#include "hydroode/models.hpp"
#include "json.hpp"

namespace hode {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t max_steps = 0;  // 0: no limit
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  std::size_t early_stop_patience = 20;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool fit_normalization = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;

  static AdamState init(const std::vector<Tensor>& params);
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when the loss becomes NaN or infinite. The model keeps its best parameters.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t last_finite_epoch)
      : std::runtime_error(what), last_finite_epoch(last_finite_epoch) {}
  std::size_t last_finite_epoch;
};

/// Scales all gradients by min(1, max_norm / ‖g‖₂) and returns the norm before scaling.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

/// Clips, then applies one bias-corrected Adam update in place. Throws
/// NonFiniteGradientError (naming the parameter) before touching anything if a gradient
/// is NaN or infinite.
void adam_step(const std::vector<Tensor>& params, std::vector<std::vector<double>> grads, AdamState& state,
               const TrainConfig& config, const std::vector<std::string>& names = {});

/// Input mean/std, force mean/std and finite-difference rate std from the training set.
void fit_normalization(ForecastModel& model, const Dataset& train);

/// Predictions for every trajectory of the dataset, [B, L, f], off the graph.
Tensor predict_dataset(const ForecastModel& model, const Dataset& data, std::size_t batch_size = 32,
                       std::size_t threads = 1);

double dataset_loss(const ForecastModel& model, const Dataset& data, std::size_t batch_size = 32,
                    std::size_t threads = 1);

/// MSE and parameter gradients for a batch; with threads > 1 the batch is split into
/// chunks evaluated on separate graphs and summed in chunk order.
struct BatchGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};
BatchGradient batch_gradient(const ForecastModel& model, const Tensor& x, const Tensor& f0, const Tensor& target,
                             std::size_t threads = 1);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_ms = 0.0;
  double lr = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainReport {
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t steps = 0;
  double wall_ms = 0.0;
  bool early_stopped = false;
  std::filesystem::path checkpoint;
};

struct TrainOutputs {
  std::filesystem::path checkpoint;  // best model, rewritten on every improvement; empty: none
  std::filesystem::path log;         // JSON lines, one record per epoch; empty: none
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Minibatch Adam on trajectory MSE with early stopping on the validation loss. An
/// empty validation set falls back to the training loss. On return the model holds the
/// parameters of the best epoch.
TrainReport train(ForecastModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                  const TrainOutputs& outputs = {});

}  // namespace hode
