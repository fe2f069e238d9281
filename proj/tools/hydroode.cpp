// hydroode: data generation, training, prediction, evaluation, benchmarking and
// gradient verification for the Neural ODE force models.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hydroode/evalbench.hpp"
#include "hydroode/fileio.hpp"
#include "hydroode/gradcheck.hpp"
#include "hydroode/ops.hpp"
#include "hydroode/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hode;

namespace {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3, kDiverged = 4, kCorrupt = 5 };

constexpr const char* kOutEnv = "HYDROODE_OUT";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void add_config(CLI::App* sub) {
  sub->add_option("--config", "JSON file with flat keys named like the flags; flags win");
}

std::string config_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Fills every option that was not given on the command line from the --config file.
void apply_config(CLI::App* sub) {
  const CLI::Option* cfg = sub->get_option_no_throw("--config");
  if (!cfg || cfg->count() == 0) return;
  const std::string path = cfg->as<std::string>();
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot read config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt || key == "config") throw UsageError("config file " + path + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    std::string text;
    if (value.is_array()) {
      for (const auto& v : value) text += (text.empty() ? "" : ",") + config_scalar(v);
    } else if (value.is_object()) {
      throw UsageError("config file " + path + ": key '" + key + "' must not be an object");
    } else {
      text = config_scalar(value);
    }
    try {
      opt->add_result(text);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("config file " + path + ": --" + key + ": " + e.what());
    }
  }
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

fs::path output_dir(const std::string& flag, const std::string& command) {
  if (!flag.empty()) return flag;
  const char* root = std::getenv(kOutEnv);
  return fs::path(root && *root ? root : "runs") / command;
}

void write_resolved(const fs::path& dir, const std::string& command, const json& options, const json& derived = {}) {
  json j{{"command", command}, {"options", options}};
  if (!derived.is_null()) j["derived"] = derived;
  write_file_atomic(dir / "resolved_config.json", j.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw UsageError("no dataset at " + dir.string() + " (manifest.json missing)");
  try {
    return read_dataset(dir);
  } catch (const std::ios_base::failure&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptArtifact("dataset " + dir.string() + ": " + e.what());
  }
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("--" + flag + " expects comma-separated positive integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("--" + flag + " must not be empty");
  return out;
}

void check_dims(const Dataset& d, const ModelConfig& c) {
  if (d.manifest.n != c.n_in || d.manifest.f != c.f_out) {
    throw UsageError("dimension mismatch: dataset has n=" + std::to_string(d.manifest.n) +
                     ", f=" + std::to_string(d.manifest.f) + " but the model has n_in=" + std::to_string(c.n_in) +
                     ", f_out=" + std::to_string(c.f_out));
  }
}

std::vector<std::size_t> split_ids(const Dataset& d, const std::string& split) {
  const auto& s = d.manifest.split;
  std::vector<std::size_t> ids;
  if (split == "all") {
    for (const auto& t : d.trajectories) ids.push_back(t.id);
    return ids;
  }
  ids = split == "train" ? s.train : split == "val" ? s.val : s.test;
  if (ids.empty()) throw UsageError("dataset manifest field split." + split + " is empty");
  return ids;
}

void write_predictions(const fs::path& dir, const Dataset& d, const Tensor& pred) {
  fs::create_directories(dir);
  const std::size_t f = d.manifest.f;
  std::size_t offset = 0;
  for (const auto& t : d.trajectories) {
    std::string csv = "t";
    for (std::size_t k = 0; k < f; ++k) csv += ",F_" + std::to_string(k);
    csv += "\n";
    for (std::size_t i = 0; i < t.length; ++i) {
      csv += format_g17(t.t0 + static_cast<double>(i + 1) * t.dt);
      for (std::size_t k = 0; k < f; ++k) csv += "," + format_g17(pred[offset + i * f + k]);
      csv += "\n";
    }
    offset += t.length * f;
    char name[40];
    std::snprintf(name, sizeof(name), "pred_%05zu.csv", t.id);
    write_file_atomic(dir / name, csv);
  }
}

// ---- gen-data ----

struct GenArgs {
  std::string task;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t trajectories = 0;
  std::size_t length = 0;
  double dt = 0.02;
  double noise = 0.10;
  std::size_t threads = 1;

  json to_json() const {
    return {{"task", task},     {"out", out},     {"seed", seed},   {"trajectories", trajectories},
            {"length", length}, {"dt", dt},       {"noise", noise}, {"threads", threads}};
  }
};

int run_gen(const GenArgs& a) {
  GenOptions g;
  g.seed = a.seed;
  g.trajectories = a.trajectories;
  g.length = a.length;
  g.dt = a.dt;
  g.noise_fraction = a.noise;
  g.threads = a.threads;
  const Task task = parse_task(a.task);
  Dataset d = generate(task, g);
  d.manifest.split = split_dataset(d, SplitRatios{}, derive_seed(a.seed, 0, 2));
  const fs::path dir = output_dir(a.out, "data/task" + a.task);
  fs::create_directories(dir);
  write_dataset(d, dir);
  write_resolved(dir, "gen-data", a.to_json());
  std::cout << "wrote " << d.trajectories.size() << " trajectories (n=" << d.manifest.n << ", f=" << d.manifest.f
            << ", L=" << d.manifest.L << ") to " << dir.string() << "\n";
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string model = "attention-ode";
  std::optional<std::string> solver;
  std::string out;
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t max_steps = 0;
  std::size_t patience = 20;
  double clip = 1.0;
  std::optional<std::size_t> d_model, heads, latent, substeps, lstm_hidden, lstm_layers, n_in, f_out;
  std::optional<std::string> hidden;
  bool time_input = false, positional_encoding = false, layer_norm = false, causal = false;

  json to_json() const {
    auto opt = [](const auto& o) { return o ? json(*o) : json(nullptr); };
    return {{"data", data},
            {"model", model},
            {"solver", opt(solver)},
            {"out", out},
            {"preset", preset},
            {"seed", seed},
            {"threads", threads},
            {"lr", lr},
            {"batch-size", batch_size},
            {"max-epochs", max_epochs},
            {"max-steps", max_steps},
            {"patience", patience},
            {"clip", clip},
            {"d-model", opt(d_model)},
            {"heads", opt(heads)},
            {"latent", opt(latent)},
            {"hidden", opt(hidden)},
            {"substeps", opt(substeps)},
            {"lstm-hidden", opt(lstm_hidden)},
            {"lstm-layers", opt(lstm_layers)},
            {"n-in", opt(n_in)},
            {"f-out", opt(f_out)},
            {"time-input", time_input},
            {"positional-encoding", positional_encoding},
            {"layer-norm", layer_norm},
            {"causal", causal}};
  }
};

int run_train(const TrainArgs& a) {
  const EncoderKind enc = parse_encoder(a.model);
  if (enc == EncoderKind::kLstm && a.solver) {
    throw UsageError("--solver does not apply to the LSTM baseline; drop it or pick an ODE model");
  }
  const Dataset data = load_dataset(a.data);
  ModelConfig mc = preset_model(parse_preset(a.preset), enc, parse_solver(a.solver.value_or("rk4")),
                                a.n_in.value_or(data.manifest.n), a.f_out.value_or(data.manifest.f), a.seed);
  mc.dt = data.manifest.dt;
  if (a.d_model) mc.d_model = *a.d_model;
  if (a.heads) mc.heads = *a.heads;
  if (a.latent) mc.latent = *a.latent;
  if (a.hidden) mc.kernel_hidden = parse_sizes(*a.hidden, "hidden");
  if (a.substeps) mc.substeps = *a.substeps;
  if (a.lstm_hidden) mc.lstm_hidden = *a.lstm_hidden;
  if (a.lstm_layers) mc.lstm_layers = *a.lstm_layers;
  mc.time_input = a.time_input;
  mc.positional_encoding = a.positional_encoding;
  mc.layer_norm = a.layer_norm;
  mc.causal = a.causal;
  mc.validate();
  check_dims(data, mc);

  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch_size;
  tc.max_epochs = a.max_epochs;
  tc.max_steps = a.max_steps;
  tc.early_stop_patience = a.patience;
  tc.grad_clip_norm = a.clip;
  tc.seed = a.seed;
  tc.threads = a.threads;
  tc.validate();

  const Dataset train_set = data.subset(split_ids(data, "train"));
  const Dataset val_set = data.manifest.split.val.empty() ? Dataset{} : data.subset(data.manifest.split.val);

  const fs::path dir = output_dir(a.out, "train");
  fs::create_directories(dir);
  write_resolved(dir, "train", a.to_json(), {{"model_config", mc}, {"train_config", tc}});
  ForecastModel model = build_model(mc);
  TrainOutputs outs;
  outs.checkpoint = dir / "model.ckpt";
  outs.log = dir / "train_log.jsonl";
  outs.on_epoch = [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  train " << r.train_loss << "  val " << r.val_loss << "\n";
  };
  const TrainReport rep = train(model, train_set, val_set, tc, outs);
  std::cout << "best epoch " << rep.best_epoch << " (val " << rep.best_val_loss << "), " << rep.steps
            << " steps; checkpoint " << outs.checkpoint.string() << "\n";
  return kOk;
}

// ---- predict / eval ----

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string split;
  std::size_t threads = 1;
  std::size_t plots = 8;

  json to_json(bool with_plots) const {
    json j{{"checkpoint", checkpoint}, {"data", data}, {"out", out}, {"split", split}, {"threads", threads}};
    if (with_plots) j["plots"] = plots;
    return j;
  }
};

int run_predict(const PredictArgs& a, bool evaluate) {
  const std::string command = evaluate ? "eval" : "predict";
  const Dataset all = load_dataset(a.data);
  const ForecastModel model = checkpoint_load(a.checkpoint);
  check_dims(all, model.config);
  const Dataset d = all.subset(split_ids(all, a.split));
  const fs::path dir = output_dir(a.out, command);
  fs::create_directories(dir);
  write_resolved(dir, command, a.to_json(evaluate), {{"model_config", model.config}});
  const Tensor pred = predict_dataset(model, d, 32, a.threads);
  write_predictions(dir / "predictions", d, pred);
  if (!evaluate) {
    std::cout << "wrote " << d.trajectories.size() << " prediction files to " << (dir / "predictions").string() << "\n";
    return kOk;
  }
  const MetricsReport m = compute_metrics(pred, d.targets());
  json per_traj = json::array();
  const std::size_t f = all.manifest.f;
  std::size_t offset = 0;
  const auto names = output_axis_names(f);
  fs::create_directories(dir / "plots");
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const auto& t = d.trajectories[i];
    const std::size_t len = t.length * f;
    const std::vector<double> p(pred.values().begin() + static_cast<std::ptrdiff_t>(offset),
                                pred.values().begin() + static_cast<std::ptrdiff_t>(offset + len));
    const std::vector<double> truth(t.forces.begin() + static_cast<std::ptrdiff_t>(f), t.forces.end());
    const MetricsReport mt = compute_metrics(Tensor({t.length, f}, p), Tensor({t.length, f}, truth));
    per_traj.push_back({{"id", t.id}, {"mae", mt.mae}, {"rmse", mt.rmse}});
    if (i < a.plots) {
      char name[40];
      std::snprintf(name, sizeof(name), "traj_%05zu.svg", t.id);
      write_file_atomic(dir / "plots" / name,
                        trajectory_svg(model_name(model.config.encoder) + ", trajectory " + std::to_string(t.id), t.dt,
                                       f, p, truth, names));
    }
    offset += len;
  }
  json report{{"split", a.split}, {"trajectories", d.trajectories.size()}, {"metrics", m}, {"per_trajectory", per_traj}};
  write_file_atomic(dir / "metrics.json", report.dump(2) + "\n");
  std::cout << "MAE " << m.mae << "  RMSE " << m.rmse << " over " << d.trajectories.size() << " trajectories ("
            << a.split << ")\n";
  return kOk;
}

// ---- bench ----

struct BenchArgs {
  std::string suite = "all";
  std::string preset = "desk";
  std::string out;
  std::string data;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::optional<std::size_t> max_epochs;
  std::size_t task1_trajectories = 0;
  std::size_t task2_trajectories = 0;
  std::size_t timing_repeats = 100;
  std::size_t timing_warmup = 10;

  json to_json() const {
    return {{"suite", suite},
            {"preset", preset},
            {"out", out},
            {"data", data},
            {"seed", seed},
            {"threads", threads},
            {"max-epochs", max_epochs ? json(*max_epochs) : json(nullptr)},
            {"task1-trajectories", task1_trajectories},
            {"task2-trajectories", task2_trajectories},
            {"timing-repeats", timing_repeats},
            {"timing-warmup", timing_warmup}};
  }
};

int run_bench(const BenchArgs& a) {
  BenchOptions o;
  o.suite = parse_suite(a.suite);
  o.preset = parse_preset(a.preset);
  o.seed = a.seed;
  o.threads = a.threads;
  o.task1_trajectories = a.task1_trajectories;
  o.task2_trajectories = a.task2_trajectories;
  o.timing_repeats = a.timing_repeats;
  o.timing_warmup = a.timing_warmup;
  const fs::path dir = output_dir(a.out, "bench");
  o.data_root = a.data.empty() ? dir / "data" : fs::path(a.data);
  fs::create_directories(dir);
  write_resolved(dir, "bench", a.to_json());
  o.max_epochs = a.max_epochs;
  const std::size_t planned = bench_plan(o.suite).size();
  o.on_cell = [&](const BenchmarkTable& t) {
    const BenchCell& c = t.cells.back();
    std::cout << "[" << t.cells.size() << "/" << planned << "] " << c.model << " " << c.solver << " task " << c.task
              << ": " << (c.ok() ? "MAE " + std::to_string(c.metrics->mae) + " RMSE " + std::to_string(c.metrics->rmse)
                                 : "FAIL:" + c.failure)
              << std::endl;
    emit_report(t, dir);
  };
  const BenchmarkTable table = run_benchmark(o);
  emit_report(table, dir);
  std::size_t failed = 0;
  for (const auto& c : table.cells) failed += c.ok() ? 0 : 1;
  std::cout << "results in " << dir.string() << " (" << table.cells.size() - failed << " of " << table.cells.size()
            << " cells ok)\n";
  return failed == table.cells.size() && !table.cells.empty() ? kVerifyFailed : kOk;
}

// ---- gradcheck ----

struct GradArgs {
  std::string model = "attention-ode";
  std::optional<std::string> solver;
  std::size_t steps = 10;
  std::uint64_t seed = 0;
  bool corrupt_backward = false;
};

int run_gradcheck(const GradArgs& a) {
  const EncoderKind enc = parse_encoder(a.model);
  if (enc == EncoderKind::kLstm && a.solver) throw UsageError("--solver does not apply to the LSTM baseline");
  if (a.steps == 0 || a.steps > 50) throw UsageError("--steps must be between 1 and 50");
  ModelConfig c;
  c.encoder = enc;
  c.solver = parse_solver(a.solver.value_or("rk4"));
  c.d_model = 8;
  c.heads = 2;
  c.latent = 8;
  c.kernel_hidden = {8, 8};
  c.lstm_hidden = 4;
  c.lstm_layers = 1;
  c.seed = a.seed;
  ForecastModel model = build_model(c);

  std::mt19937_64 rng(derive_seed(a.seed, 0, 7));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random = [&](Shape s, double scale) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = scale * u(rng);
    return Tensor(std::move(s), std::move(v));
  };
  // The zero-initialised output layer would hide most of the chain.
  for (const auto& [name, t] : model.params.entries()) {
    Tensor p = t;
    auto v = p.mutable_values();
    for (auto& x : v) x += 0.1 * u(rng);
  }
  model.norm.force_scale = Tensor::vector({1.5, 0.7});
  model.norm.rate_scale = Tensor::vector({2.0, 0.5});
  model.norm.force_mean = Tensor::vector({0.2, -0.1});
  const Tensor x = random({a.steps, c.n_in}, 1.0);
  const Tensor f0 = random({c.f_out}, 1.0);
  const Tensor target = random({a.steps, c.f_out}, 1.0);

  if (a.corrupt_backward) testing::set_tanh_backward_scale(1.5);
  const auto params = model.params.tensors();
  const GradCheckResult r = grad_check(
      [&](std::span<const Tensor>) { return mse_loss(predict(model, x, f0), target); }, params, 1e-5);
  testing::set_tanh_backward_scale(1.0);

  const std::string worst = model.params.entries()[r.worst_tensor].first + "[" + std::to_string(r.worst_entry) + "]";
  std::cout << model_name(enc) << (enc == EncoderKind::kLstm ? "" : " " + to_string(c.solver)) << ", " << a.steps
            << " steps, " << r.entries_checked << " entries: max relative error " << r.max_relative_error
            << " (worst " << worst << ": analytic " << r.analytic << ", numeric " << r.numeric << ")\n";
  if (r.max_relative_error < 1e-4) {
    std::cout << "PASS\n";
    return kOk;
  }
  std::cout << "FAIL: worst parameter " << worst << "\n";
  return kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-encoded Neural ODE hydrodynamic force forecasting"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.footer(std::string("Exit codes: 0 ok, 1 verification failure, 2 usage, 3 I/O, 4 divergence, 5 corrupt "
                         "artifact.\nDefault output root: $") +
             kOutEnv + " or ./runs");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset with its split");
  add_config(g);
  g->add_option("--task", gen.task, "Task variant (required)")->check(CLI::IsMember({"1.1", "1.2", "1.3", "2"}));
  g->add_option("--out", gen.out, "Output directory");
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--trajectories", gen.trajectories, "Number of trajectories (0: task default)");
  g->add_option("--length", gen.length, "Steps per trajectory (0: task default)");
  g->add_option("--dt", gen.dt, "Sampling period in seconds")->check(CLI::PositiveNumber);
  g->add_option("--noise", gen.noise, "Noise as a fraction of the force std (Tasks 1.3 and 2)")
      ->check(CLI::Range(0.0, 10.0));
  g->add_option("--threads", gen.threads, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset directory");
  add_config(t);
  t->add_option("--data", tr.data, "Dataset directory (required)");
  t->add_option("--model", tr.model, "Model")->check(CLI::IsMember({"attention-ode", "mlp-ode", "lstm"}));
  t->add_option("--solver", tr.solver, "Integrator for ODE models (default rk4)")
      ->check(CLI::IsMember({"euler", "rk4"}));
  t->add_option("--out", tr.out, "Output directory");
  t->add_option("--preset", tr.preset, "Model size preset")->check(CLI::IsMember({"desk", "paper"}));
  t->add_option("--seed", tr.seed, "Seed for initialisation and shuffling");
  t->add_option("--threads", tr.threads, "Worker threads")->check(CLI::PositiveNumber);
  t->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  t->add_option("--batch-size", tr.batch_size, "Trajectories per batch")->check(CLI::PositiveNumber);
  t->add_option("--max-epochs", tr.max_epochs, "Epoch limit")->check(CLI::PositiveNumber);
  t->add_option("--max-steps", tr.max_steps, "Optimizer step limit (0: none)");
  t->add_option("--patience", tr.patience, "Early stopping patience in epochs")->check(CLI::PositiveNumber);
  t->add_option("--clip", tr.clip, "Global gradient norm clip (0: off)")->check(CLI::NonNegativeNumber);
  t->add_option("--d-model", tr.d_model, "Encoder width");
  t->add_option("--heads", tr.heads, "Attention heads");
  t->add_option("--latent", tr.latent, "Latent size");
  t->add_option("--hidden", tr.hidden, "Kernel hidden sizes, e.g. 64,64,64");
  t->add_option("--substeps", tr.substeps, "Integrator substeps per sample");
  t->add_option("--lstm-hidden", tr.lstm_hidden, "LSTM hidden size");
  t->add_option("--lstm-layers", tr.lstm_layers, "LSTM layers");
  t->add_option("--n-in", tr.n_in, "Expected input width (default: from the dataset)");
  t->add_option("--f-out", tr.f_out, "Expected output width (default: from the dataset)");
  t->add_flag("--time-input", tr.time_input, "Feed t to the kernel");
  t->add_flag("--positional-encoding", tr.positional_encoding, "Sinusoidal positions in the encoder");
  t->add_flag("--layer-norm", tr.layer_norm, "Layer norm after attention");
  t->add_flag("--causal", tr.causal, "Causal attention mask");

  PredictArgs pr;
  pr.split = "all";
  auto* p = app.add_subcommand("predict", "Write predicted forces for a dataset");
  add_config(p);
  p->add_option("--checkpoint", pr.checkpoint, "Model checkpoint (required)");
  p->add_option("--data", pr.data, "Dataset directory (required)");
  p->add_option("--out", pr.out, "Output directory");
  p->add_option("--split", pr.split, "Trajectories to use")->check(CLI::IsMember({"all", "train", "val", "test"}));
  p->add_option("--threads", pr.threads, "Worker threads")->check(CLI::PositiveNumber);

  PredictArgs ev;
  ev.split = "test";
  auto* e = app.add_subcommand("eval", "Predict and score a split, with SVG overlays");
  add_config(e);
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint (required)");
  e->add_option("--data", ev.data, "Dataset directory (required)");
  e->add_option("--out", ev.out, "Output directory");
  e->add_option("--split", ev.split, "Trajectories to score")->check(CLI::IsMember({"all", "train", "val", "test"}));
  e->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);
  e->add_option("--plots", ev.plots, "Number of trajectories to plot");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Train and score the model grid of Tables I and IV");
  add_config(b);
  b->add_option("--suite", be.suite, "Tables to run")->check(CLI::IsMember({"task1", "task2", "all"}));
  b->add_option("--preset", be.preset, "Model size preset")->check(CLI::IsMember({"desk", "paper"}));
  b->add_option("--out", be.out, "Output directory");
  b->add_option("--data", be.data, "Dataset root (default: <out>/data)");
  b->add_option("--seed", be.seed, "Seed for data, models and training");
  b->add_option("--threads", be.threads, "Worker threads")->check(CLI::PositiveNumber);
  b->add_option("--max-epochs", be.max_epochs, "Override the preset epoch budget")->check(CLI::PositiveNumber);
  b->add_option("--task1-trajectories", be.task1_trajectories, "Task 1 dataset size (0: default)");
  b->add_option("--task2-trajectories", be.task2_trajectories, "Task 2 dataset size (0: default)");
  b->add_option("--timing-repeats", be.timing_repeats, "Timed forward passes per cell")->check(CLI::PositiveNumber);
  b->add_option("--timing-warmup", be.timing_warmup, "Untimed warmup passes per cell");

  GradArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare backprop with central differences on a tiny model");
  c->add_option("--model", gc.model, "Model")->check(CLI::IsMember({"attention-ode", "mlp-ode", "lstm"}));
  c->add_option("--solver", gc.solver, "Integrator")->check(CLI::IsMember({"euler", "rk4"}));
  c->add_option("--steps", gc.steps, "Sequence length");
  c->add_option("--seed", gc.seed, "Seed");
  c->add_flag("--corrupt-backward", gc.corrupt_backward)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    if (rc == 0) return kOk;
    for (auto* sub : app.get_subcommands()) std::cerr << "\n" << sub->help();
    return kUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    apply_config(active);
    if (*g) {
      require(gen.task, "--task");
      return run_gen(gen);
    }
    if (*t) require(tr.data, "--data");
    if (*p || *e) {
      const PredictArgs& a = *p ? pr : ev;
      require(a.checkpoint, "--checkpoint");
      require(a.data, "--data");
    }
    if (*t) return run_train(tr);
    if (*p) return run_predict(pr, false);
    if (*e) return run_predict(ev, true);
    if (*b) return run_bench(be);
    if (*c) return run_gradcheck(gc);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << active->help();
    return kUsage;
  } catch (const DivergenceError& err) {
    std::cerr << "error: training diverged: " << err.what() << " (last finite epoch " << err.last_finite_epoch
              << ")\n";
    return kDiverged;
  } catch (const CheckpointError& err) {
    std::cerr << "error: corrupt checkpoint: " << err.what() << "\n";
    return kCorrupt;
  } catch (const CorruptArtifact& err) {
    std::cerr << "error: corrupt artifact: " << err.what() << "\n";
    return kCorrupt;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const std::ios_base::failure& err) {
    std::cerr << "error: I/O: " << err.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: I/O: " << err.what() << "\n";
    return kIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kVerifyFailed;
  }
  return kUsage;
}
