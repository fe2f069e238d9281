#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hydroode/hydrodata.hpp"
#include "hydroode/models.hpp"
#include "hydroode/training.hpp"
#include "json.hpp"

namespace hode {

/// Error statistics over [.., f] tensors. Pooled values run over every element, per-axis
/// values over all leading positions of one output axis.
struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<double> mae_axis;
  std::vector<double> rmse_axis;
  std::size_t num_samples = 0;  // leading positions (B·L)

  /// Throws std::logic_error unless rmse >= mae >= 0 pooled and per axis.
  void check() const;
};

void to_json(nlohmann::json& j, const MetricsReport& m);

MetricsReport compute_metrics(const Tensor& pred, const Tensor& truth);

struct TimingReport {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::size_t repeats = 0;
  std::size_t warmup = 0;
  std::size_t threads = 1;
  std::string hardware;
};

void to_json(nlohmann::json& j, const TimingReport& t);

/// CPU model name from /proc/cpuinfo, or "unknown".
std::string hardware_string();

/// Wall clock of one full-sequence predict (encoding plus integration) on the calling thread.
TimingReport time_inference(const ForecastModel& model, const Tensor& x, const Tensor& f0, std::size_t repeats = 100,
                            std::size_t warmup = 10);

enum class Preset { kDesk, kPaper };
Preset parse_preset(const std::string& s);
std::string to_string(Preset p);

enum class Suite { kTask1, kTask2, kAll };
Suite parse_suite(const std::string& s);
std::string to_string(Suite s);

/// Model sizes per preset. Desk: d_model 64, kernel [64,64,64], LSTM hidden 64.
/// Paper: kernel [512,512,512], heads 4, LSTM hidden 256.
ModelConfig preset_model(Preset preset, EncoderKind encoder, SolverKind solver, std::size_t n_in, std::size_t f_out,
                         std::uint64_t seed);

struct BenchSpec {
  std::string table;  // "I" or "IV"
  EncoderKind encoder = EncoderKind::kAttention;
  SolverKind solver = SolverKind::kRk4;
  Task task = Task::k1_1;
};

/// Table I: {MLP, Attention} × {euler, rk4} on Tasks 1.1/1.2/1.3. Table IV: MLP-ODE,
/// Attention-ODE (euler) and LSTM on Task 2.
std::vector<BenchSpec> bench_plan(Suite suite);

struct BenchCell {
  std::string table;
  std::string model;   // display name
  std::string solver;  // "euler", "rk4", or "-" for the LSTM
  std::string task;    // "1.1", "1.2", "1.3", "2"
  std::optional<MetricsReport> metrics;
  std::size_t params = 0;
  double time_ms_mean = 0.0;
  std::uint64_t seed = 0;
  std::string failure;  // empty when the cell succeeded
  nlohmann::json provenance;

  // first test trajectory, for plots
  double dt = 0.0;
  std::size_t f = 0;
  std::vector<double> sample_pred, sample_truth;  // [L × f]

  bool ok() const { return failure.empty(); }
};

struct BenchmarkTable {
  std::vector<BenchCell> cells;
  nlohmann::json provenance;
};

struct BenchOptions {
  Suite suite = Suite::kAll;
  Preset preset = Preset::kDesk;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path data_root;  // datasets are read from here, or generated and written here
  std::optional<TrainConfig> train;  // overrides the preset training budget
  std::optional<std::size_t> max_epochs;  // caps whichever budget applies
  std::size_t task1_trajectories = 0;  // 0: task default
  std::size_t task2_trajectories = 0;
  std::size_t timing_repeats = 100;
  std::size_t timing_warmup = 10;
  std::function<void(const BenchmarkTable&)> on_cell;
};

/// Preset training budget for a task.
TrainConfig preset_train(Preset preset, Task task, std::uint64_t seed);

/// Trains and evaluates every cell of the plan. A failing cell is recorded and the run continues.
BenchmarkTable run_benchmark(const BenchOptions& options);

/// results.csv, results.json, table1.csv / table4.csv for the tables present, and one SVG
/// per successful cell under plots/. Each file is replaced atomically.
void emit_report(const BenchmarkTable& table, const std::filesystem::path& dir);

/// Parses results.csv back into cells (metrics, params, timing, seed, failure).
std::vector<BenchCell> read_results_csv(const std::filesystem::path& path);

/// Prediction-versus-truth overlay, one solid (prediction) and one dashed (truth) polyline per axis.
std::string trajectory_svg(const std::string& title, double dt, std::size_t f, const std::vector<double>& pred,
                           const std::vector<double>& truth, const std::vector<std::string>& axis_names = {});

/// Axis names for f outputs: Fx, Fy for 2, Fx..Tz for 6, otherwise y0, y1, ...
std::vector<std::string> output_axis_names(std::size_t f);

}  // namespace hode
