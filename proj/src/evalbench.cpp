#include "hydroode/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "hydroode/fileio.hpp"

namespace hode {

namespace fs = std::filesystem;

void MetricsReport::check() const {
  auto bad = [](double mae, double rmse) {
    // Rounding can put an exact-equality case a few ulps the wrong way.
    return !(mae >= 0.0) || !(rmse >= mae * (1.0 - 1e-12));
  };
  if (bad(mae, rmse)) throw std::logic_error("metrics violate rmse >= mae >= 0");
  if (mae_axis.size() != rmse_axis.size()) throw std::logic_error("per-axis metric lengths differ");
  for (std::size_t k = 0; k < mae_axis.size(); ++k)
    if (bad(mae_axis[k], rmse_axis[k])) throw std::logic_error("per-axis metrics violate rmse >= mae >= 0");
}

void to_json(nlohmann::json& j, const MetricsReport& m) {
  j = nlohmann::json{{"mae", m.mae},
                     {"rmse", m.rmse},
                     {"mae_per_axis", m.mae_axis},
                     {"rmse_per_axis", m.rmse_axis},
                     {"num_samples", m.num_samples}};
}

MetricsReport compute_metrics(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw DimensionError("compute_metrics shapes differ: " + shape_string(pred.shape()) + " vs " +
                         shape_string(truth.shape()));
  }
  if (pred.rank() == 0 || pred.size() == 0) throw std::invalid_argument("compute_metrics needs nonempty input");
  const std::size_t f = pred.shape().back();
  const std::size_t rows = pred.size() / f;
  const auto p = pred.values(), t = truth.values();
  std::vector<double> abs_sum(f, 0.0), sq_sum(f, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < f; ++k) {
      const double e = p[r * f + k] - t[r * f + k];
      abs_sum[k] += std::abs(e);
      sq_sum[k] += e * e;
    }
  }
  MetricsReport m;
  m.num_samples = rows;
  double a = 0.0, s = 0.0;
  for (std::size_t k = 0; k < f; ++k) {
    m.mae_axis.push_back(abs_sum[k] / static_cast<double>(rows));
    m.rmse_axis.push_back(std::sqrt(sq_sum[k] / static_cast<double>(rows)));
    a += abs_sum[k];
    s += sq_sum[k];
  }
  m.mae = a / static_cast<double>(pred.size());
  m.rmse = std::sqrt(s / static_cast<double>(pred.size()));
  m.check();
  return m;
}

void to_json(nlohmann::json& j, const TimingReport& t) {
  j = nlohmann::json{{"mean_ms", t.mean_ms}, {"median_ms", t.median_ms}, {"p95_ms", t.p95_ms},
                     {"repeats", t.repeats}, {"warmup", t.warmup},       {"threads", t.threads},
                     {"hardware", t.hardware}};
}

std::string hardware_string() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto name = line.substr(colon + 1);
        name.erase(0, name.find_first_not_of(' '));
        return name + " (" + std::to_string(std::thread::hardware_concurrency()) + " logical cores)";
      }
    }
  }
  return "unknown";
}

TimingReport time_inference(const ForecastModel& model, const Tensor& x, const Tensor& f0, std::size_t repeats,
                            std::size_t warmup) {
  if (repeats == 0) throw std::invalid_argument("time_inference needs repeats >= 1");
  using Clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) predict(model, x, f0);
  std::vector<double> ms;
  ms.reserve(repeats);
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto start = Clock::now();
    const Tensor out = predict(model, x, f0);
    ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
  }
  TimingReport r;
  r.repeats = repeats;
  r.warmup = warmup;
  r.threads = 1;
  r.hardware = hardware_string();
  double total = 0.0;
  for (double v : ms) total += v;
  r.mean_ms = total / static_cast<double>(repeats);
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  r.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  // nearest rank
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  r.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  return r;
}

Preset parse_preset(const std::string& s) {
  if (s == "desk") return Preset::kDesk;
  if (s == "paper") return Preset::kPaper;
  throw std::invalid_argument("unknown preset '" + s + "' (expected desk or paper)");
}

std::string to_string(Preset p) { return p == Preset::kDesk ? "desk" : "paper"; }

Suite parse_suite(const std::string& s) {
  if (s == "task1") return Suite::kTask1;
  if (s == "task2") return Suite::kTask2;
  if (s == "all") return Suite::kAll;
  throw std::invalid_argument("unknown suite '" + s + "' (expected task1, task2 or all)");
}

std::string to_string(Suite s) {
  switch (s) {
    case Suite::kTask1: return "task1";
    case Suite::kTask2: return "task2";
    case Suite::kAll: return "all";
  }
  return "?";
}

ModelConfig preset_model(Preset preset, EncoderKind encoder, SolverKind solver, std::size_t n_in, std::size_t f_out,
                         std::uint64_t seed) {
  ModelConfig c;
  c.encoder = encoder;
  c.solver = solver;
  c.n_in = n_in;
  c.f_out = f_out;
  c.seed = seed;
  if (preset == Preset::kPaper) {
    c.kernel_hidden = {512, 512, 512};
    c.heads = 4;
    c.lstm_hidden = 256;
  }
  return c;
}

TrainConfig preset_train(Preset preset, Task task, std::uint64_t seed) {
  TrainConfig t;
  t.seed = seed;
  t.batch_size = 8;
  if (preset == Preset::kDesk) {
    t.max_epochs = task == Task::k2 ? 15 : 40;
    t.early_stop_patience = 10;
  } else {
    t.max_epochs = task == Task::k2 ? 300 : 500;
    t.early_stop_patience = 50;
  }
  return t;
}

std::vector<BenchSpec> bench_plan(Suite suite) {
  std::vector<BenchSpec> plan;
  if (suite != Suite::kTask2) {
    for (Task task : {Task::k1_1, Task::k1_2, Task::k1_3}) {
      for (SolverKind solver : {SolverKind::kEuler, SolverKind::kRk4})
        for (EncoderKind enc : {EncoderKind::kMlp, EncoderKind::kAttention}) plan.push_back({"I", enc, solver, task});
    }
  }
  if (suite != Suite::kTask1) {
    for (EncoderKind enc : {EncoderKind::kMlp, EncoderKind::kAttention, EncoderKind::kLstm})
      plan.push_back({"IV", enc, SolverKind::kEuler, Task::k2});
  }
  return plan;
}

namespace {

std::string task_dir_name(Task t) {
  std::string s = "task" + to_string(t);
  std::replace(s.begin(), s.end(), '.', '_');
  return s;
}

const Dataset& load_or_generate(std::map<Task, Dataset>& cache, Task task, const BenchOptions& o) {
  auto it = cache.find(task);
  if (it != cache.end()) return it->second;
  const fs::path dir = o.data_root.empty() ? fs::path() : o.data_root / task_dir_name(task);
  Dataset d;
  if (!dir.empty() && fs::exists(dir / "manifest.json")) {
    d = read_dataset(dir);
  } else {
    GenOptions g;
    g.seed = o.seed;
    g.threads = o.threads;
    g.trajectories = task == Task::k2 ? o.task2_trajectories : o.task1_trajectories;
    d = generate(task, g);
    d.manifest.split = split_dataset(d, SplitRatios{}, derive_seed(o.seed, 0, 2));
    if (!dir.empty()) {
      fs::create_directories(dir);
      write_dataset(d, dir);
    }
  }
  if (d.manifest.split.train.empty() || d.manifest.split.test.empty()) {
    throw std::runtime_error("dataset for task " + to_string(task) + " has no train or test split");
  }
  return cache.emplace(task, std::move(d)).first->second;
}

BenchCell run_cell(const BenchSpec& spec, const Dataset& data, const BenchOptions& o) {
  BenchCell cell;
  cell.table = spec.table;
  cell.model = model_name(spec.encoder);
  cell.solver = spec.encoder == EncoderKind::kLstm ? "-" : to_string(spec.solver);
  cell.task = to_string(spec.task);
  cell.seed = o.seed;
  try {
    const auto& m = data.manifest;
    ModelConfig mc = preset_model(o.preset, spec.encoder, spec.solver, m.n, m.f, o.seed);
    mc.dt = m.dt;
    TrainConfig tc = o.train.value_or(preset_train(o.preset, spec.task, o.seed));
    if (o.max_epochs) tc.max_epochs = *o.max_epochs;
    tc.threads = o.threads;
    cell.provenance = {{"model_config", mc}, {"train_config", tc}};
    ForecastModel model = build_model(mc);
    cell.params = count_params(model.params);
    const Dataset train_set = data.subset(m.split.train);
    const Dataset val_set = data.subset(m.split.val);
    const Dataset test_set = data.subset(m.split.test);
    const TrainReport rep = train(model, train_set, val_set, tc);
    cell.provenance["best_epoch"] = rep.best_epoch;
    cell.provenance["epochs_run"] = rep.history.size();
    const Tensor pred = predict_dataset(model, test_set, tc.batch_size, o.threads);
    const Tensor truth = test_set.targets();
    const MetricsReport metrics = compute_metrics(pred, truth);
    if (!std::isfinite(metrics.mae) || !std::isfinite(metrics.rmse)) {
      throw std::runtime_error("non-finite test metrics");
    }
    cell.metrics = metrics;
    const auto& first = test_set.trajectories.front();
    cell.dt = first.dt;
    cell.f = first.f;
    const std::size_t len = first.length * first.f;
    cell.sample_pred.assign(pred.values().begin(), pred.values().begin() + static_cast<std::ptrdiff_t>(len));
    cell.sample_truth.assign(truth.values().begin(), truth.values().begin() + static_cast<std::ptrdiff_t>(len));
    const TimingReport timing =
        time_inference(model, first.inputs(), first.initial(), o.timing_repeats, o.timing_warmup);
    cell.time_ms_mean = timing.mean_ms;
    cell.provenance["timing"] = timing;
  } catch (const std::exception& e) {
    cell.metrics.reset();
    cell.failure = e.what();
  }
  return cell;
}

}  // namespace

BenchmarkTable run_benchmark(const BenchOptions& o) {
  BenchmarkTable table;
  table.provenance = {{"suite", to_string(o.suite)},
                      {"preset", to_string(o.preset)},
                      {"seed", o.seed},
                      {"threads", o.threads},
                      {"hardware", hardware_string()}};
  std::map<Task, Dataset> cache;
  for (const auto& spec : bench_plan(o.suite)) {
    const Dataset* data = nullptr;
    std::string data_error;
    try {
      data = &load_or_generate(cache, spec.task, o);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    if (data) {
      table.cells.push_back(run_cell(spec, *data, o));
    } else {
      BenchCell cell;
      cell.table = spec.table;
      cell.model = model_name(spec.encoder);
      cell.solver = spec.encoder == EncoderKind::kLstm ? "-" : to_string(spec.solver);
      cell.task = to_string(spec.task);
      cell.seed = o.seed;
      cell.failure = "dataset: " + data_error;
      table.cells.push_back(cell);
    }
    if (o.on_cell) o.on_cell(table);
  }
  return table;
}

// ---- report files ----

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::string join_g17(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_g17(v[i]);
  return s;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) out.push_back(std::stod(item));
  return out;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

const BenchCell* find_cell(const BenchmarkTable& t, const std::string& table, const std::string& model,
                           const std::string& solver, const std::string& task) {
  for (const auto& c : t.cells)
    if (c.table == table && c.model == model && c.solver == solver && c.task == task) return &c;
  return nullptr;
}

std::string cell_value(const BenchCell* c, bool rmse) {
  if (!c) return "";
  if (!c->ok()) return csv_field("FAIL:" + c->failure);
  return short_num(rmse ? c->metrics->rmse : c->metrics->mae);
}

std::string plot_name(const BenchCell& c) {
  std::string s = c.model + "_" + (c.solver == "-" ? "none" : c.solver) + "_task" + c.task;
  std::replace(s.begin(), s.end(), '.', '_');
  return s + ".svg";
}

}  // namespace

void emit_report(const BenchmarkTable& table, const fs::path& dir) {
  fs::create_directories(dir);
  std::string csv = "model,solver,task,mae,rmse,mae_per_axis,rmse_per_axis,params,time_ms_mean,seed\n";
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : table.cells) {
    std::vector<std::string> metric_fields(4, csv_field("FAIL:" + c.failure));
    if (c.ok()) {
      metric_fields = {format_g17(c.metrics->mae), format_g17(c.metrics->rmse), join_g17(c.metrics->mae_axis),
                       join_g17(c.metrics->rmse_axis)};
    }
    csv += csv_field(c.model) + "," + c.solver + "," + c.task;
    for (const auto& f : metric_fields) csv += "," + f;
    csv += "," + std::to_string(c.params) + "," + (c.ok() ? format_g17(c.time_ms_mean) : csv_field("FAIL:" + c.failure)) +
           "," + std::to_string(c.seed) + "\n";

    nlohmann::json j{{"table", c.table},   {"model", c.model}, {"solver", c.solver},
                     {"task", c.task},     {"params", c.params}, {"seed", c.seed},
                     {"provenance", c.provenance}};
    if (c.ok()) {
      j["mae"] = c.metrics->mae;
      j["rmse"] = c.metrics->rmse;
      j["mae_per_axis"] = c.metrics->mae_axis;
      j["rmse_per_axis"] = c.metrics->rmse_axis;
      j["num_samples"] = c.metrics->num_samples;
      j["time_ms_mean"] = c.time_ms_mean;
    } else {
      j["failure"] = "FAIL:" + c.failure;
    }
    cells.push_back(std::move(j));
  }
  write_file_atomic(dir / "results.csv", csv);
  write_file_atomic(dir / "results.json",
                    nlohmann::json{{"provenance", table.provenance}, {"cells", cells}}.dump(2) + "\n");

  const bool has_t1 = std::any_of(table.cells.begin(), table.cells.end(), [](const auto& c) { return c.table == "I"; });
  const bool has_t4 = std::any_of(table.cells.begin(), table.cells.end(), [](const auto& c) { return c.table == "IV"; });
  if (has_t1) {
    std::string t1 = "Models,MAE-S,RMSE-S,MAE-C,RMSE-C,MAE-N,RMSE-N\n";
    for (const char* solver : {"euler", "rk4"}) {
      for (const char* model : {"MLP-ODE", "Attention-ODE"}) {
        t1 += std::string(model) + "-" + (std::string(solver) == "rk4" ? "RK4" : "euler");
        for (const char* task : {"1.1", "1.2", "1.3"}) {
          const BenchCell* c = find_cell(table, "I", model, solver, task);
          t1 += "," + cell_value(c, false) + "," + cell_value(c, true);
        }
        t1 += "\n";
      }
    }
    write_file_atomic(dir / "table1.csv", t1);
  }
  if (has_t4) {
    const std::vector<std::pair<std::string, std::string>> cols{
        {"MLP-ODE", "euler"}, {"Attention-ODE", "euler"}, {"LSTM", "-"}};
    std::string t4 = "Metric";
    for (const auto& [m, s] : cols) t4 += "," + m;
    t4 += "\n";
    for (const char* row : {"Time", "Parameters", "MAE", "RMSE"}) {
      t4 += row;
      for (const auto& [m, s] : cols) {
        const BenchCell* c = find_cell(table, "IV", m, s, "2");
        t4 += ",";
        if (!c) continue;
        const std::string r = row;
        if (r == "Parameters") t4 += std::to_string(c->params);
        else if (!c->ok()) t4 += csv_field("FAIL:" + c->failure);
        else if (r == "Time") t4 += short_num(c->time_ms_mean) + "ms";
        else t4 += cell_value(c, r == "RMSE");
      }
      t4 += "\n";
    }
    write_file_atomic(dir / "table4.csv", t4);
  }
  fs::create_directories(dir / "plots");
  for (const auto& c : table.cells) {
    if (!c.ok() || c.sample_pred.empty()) continue;
    const std::string title = c.model + (c.solver == "-" ? "" : " " + c.solver) + ", task " + c.task;
    write_file_atomic(dir / "plots" / plot_name(c),
                      trajectory_svg(title, c.dt, c.f, c.sample_pred, c.sample_truth, output_axis_names(c.f)));
  }
}

std::vector<BenchCell> read_results_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "model,solver,task,mae,rmse,mae_per_axis,rmse_per_axis,params,time_ms_mean,seed") {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  std::vector<BenchCell> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 10) throw std::runtime_error(path.string() + ": expected 10 columns in '" + line + "'");
    BenchCell c;
    c.model = f[0];
    c.solver = f[1];
    c.task = f[2];
    c.table = c.task == "2" ? "IV" : "I";
    c.params = std::stoull(f[7]);
    c.seed = std::stoull(f[9]);
    if (f[3].rfind("FAIL:", 0) == 0) {
      c.failure = f[3].substr(5);
    } else {
      MetricsReport m;
      m.mae = std::stod(f[3]);
      m.rmse = std::stod(f[4]);
      m.mae_axis = split_doubles(f[5]);
      m.rmse_axis = split_doubles(f[6]);
      c.metrics = m;
      c.time_ms_mean = std::stod(f[8]);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::string> output_axis_names(std::size_t f) {
  if (f == 2) return {"Fx (N)", "Fy (N)"};
  if (f == 6) return {"Fx (N)", "Fy (N)", "Fz (N)", "Tx (N·m)", "Ty (N·m)", "Tz (N·m)"};
  std::vector<std::string> names;
  for (std::size_t k = 0; k < f; ++k) names.push_back("y" + std::to_string(k));
  return names;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string trajectory_svg(const std::string& title, double dt, std::size_t f, const std::vector<double>& pred,
                           const std::vector<double>& truth, const std::vector<std::string>& axis_names) {
  if (f == 0 || pred.size() != truth.size() || pred.size() % f != 0) {
    throw DimensionError("trajectory_svg: prediction and truth must both be [L × f]");
  }
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const std::size_t len = pred.size() / f;
  const double w = 720, h = 400, left = 70, right = 170, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto* v : {&pred, &truth})
    for (double y : *v) {
      if (!std::isfinite(y)) continue;
      lo = first ? y : std::min(lo, y);
      hi = first ? y : std::max(hi, y);
      first = false;
    }
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double t_end = dt * static_cast<double>(len);
  auto sx = [&](std::size_t i) { return left + pw * (len > 1 ? static_cast<double>(i) / static_cast<double>(len - 1) : 0.5); };
  auto sy = [&](double y) { return top + ph * (1.0 - (y - lo) / (hi - lo)); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << " " << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n"
    << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = lo + (hi - lo) * k / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << num(sy(y) + 4) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"10\">" << short_num(y) << "</text>\n";
    const double t = t_end * k / 4.0;
    s << "<text x=\"" << num(left + pw * k / 4.0) << "\" y=\"" << top + ph + 14
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << short_num(t) << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">time (s)</text>\n"
    << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
    << "transform=\"rotate(-90 16 " << top + ph / 2 << ")\">"
    << (f == 6 ? "force (N) / torque (N·m)" : "force (N)") << "</text>\n";
  for (std::size_t k = 0; k < f; ++k) {
    const char* color = colors[k % 6];
    for (int which = 0; which < 2; ++which) {
      const auto& v = which == 0 ? pred : truth;
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
        << (which == 1 ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
      for (std::size_t i = 0; i < len; ++i) {
        const double y = std::isfinite(v[i * f + k]) ? v[i * f + k] : lo;
        s << (i ? " " : "") << num(sx(i)) << "," << num(sy(y));
      }
      s << "\"/>\n";
    }
    const std::string name = k < axis_names.size() ? axis_names[k] : "y" + std::to_string(k);
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << w - right + 12 << "\" y1=\"" << ly << "\" x2=\"" << w - right + 36 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n"
      << "<text x=\"" << w - right + 42 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << xml_escape(name) << "</text>\n";
  }
  const double ly = top + 14 + 18.0 * static_cast<double>(f) + 6;
  s << "<text x=\"" << w - right + 12 << "\" y=\"" << ly + 4
    << "\" font-family=\"sans-serif\" font-size=\"10\">solid: predicted</text>\n"
    << "<text x=\"" << w - right + 12 << "\" y=\"" << ly + 18
    << "\" font-family=\"sans-serif\" font-size=\"10\">dashed: measured</text>\n"
    << "</svg>\n";
  return s.str();
}

}  // namespace hode
