// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only N[,N...]] [--work DIR]

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hydroode/evalbench.hpp"
#include "hydroode/gradcheck.hpp"
#include "hydroode/hydrodata.hpp"
#include "hydroode/layers.hpp"
#include "hydroode/models.hpp"
#include "hydroode/odeint.hpp"
#include "hydroode/ops.hpp"
#include "hydroode/training.hpp"
#include "json.hpp"

using namespace hode;
namespace fs = std::filesystem;

namespace {

fs::path g_work;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HYDROODE_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Byte comparison of every regular file under a and b except resolved_config.json.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t* files = nullptr) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (rel.filename() == "resolved_config.json") continue;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) return false;
    ++n;
  }
  if (files) *files = n;
  return n > 0;
}

double decay_final(SolverKind s, double dt, std::size_t steps) {
  const FunctionKernel k([](const Tensor& f, const Tensor&, double) { return neg(f); });
  const Tensor traj = integrate(s, Tensor::vector({1.0}), k, {0.0, dt, steps}, Tensor::zeros({steps, 1}));
  return traj[steps - 1];
}

double pooled_rmse(const Tensor& p, const Tensor& y) { return compute_metrics(p, y).rmse; }

// Population standard deviation of each output axis over every sample of y [B, L, f].
std::vector<double> axis_std(const Tensor& y) {
  const std::size_t f = y.dim(2), n = y.size() / f;
  std::vector<double> mean(f, 0.0), var(f, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) mean[i % f] += y[i];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < y.size(); ++i) var[i % f] += (y[i] - mean[i % f]) * (y[i] - mean[i % f]);
  for (auto& v : var) v = std::sqrt(v / static_cast<double>(n));
  return var;
}

// ---- criteria ----

Outcome integrator_accuracy() {
  Stopwatch sw;
  const double exact = std::exp(-1.0);
  const double rk4 = std::abs(decay_final(SolverKind::kRk4, 0.01, 100) - exact);
  const double euler = std::abs(decay_final(SolverKind::kEuler, 0.01, 100) - exact);
  const double closed = std::abs(std::pow(0.99, 100) - exact);
  const double t = sw.seconds();
  // Reference is e^-1 at full precision; the 8-digit literal 0.36787944 is itself 1.2e-9 off.
  const bool pass = rk4 < 1e-9 && euler > 1.85e-3 / 2 && euler < 1.85e-3 * 2 &&
                    std::abs(euler - closed) < 1e-15 && t < 1.0;
  return {pass, "rk4 |F(1)-e^-1| " + num(rk4) + ", euler error " + num(euler) + " (closed form " + num(closed) +
                    "), " + num(t) + " s"};
}

Outcome convergence_order() {
  Stopwatch sw;
  std::vector<double> slopes;
  for (SolverKind s : {SolverKind::kEuler, SolverKind::kRk4}) {
    std::vector<double> lx, ly;
    for (double dt : {0.1, 0.05, 0.025}) {
      const auto steps = static_cast<std::size_t>(std::lround(1.0 / dt));
      lx.push_back(std::log(dt));
      ly.push_back(std::log(std::abs(decay_final(s, dt, steps) - std::exp(-1.0))));
    }
    const double mx = (lx[0] + lx[1] + lx[2]) / 3, my = (ly[0] + ly[1] + ly[2]) / 3;
    double sxy = 0.0, sxx = 0.0;
    for (int i = 0; i < 3; ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    slopes.push_back(sxy / sxx);
  }
  const double t = sw.seconds();
  const bool pass = std::abs(slopes[0] - 1.0) <= 0.1 && std::abs(slopes[1] - 4.0) <= 0.3 && t < 1.0;
  return {pass, "euler slope " + num(slopes[0]) + ", rk4 slope " + num(slopes[1]) + ", " + num(t) + " s"};
}

Outcome gradient_correctness() {
  Stopwatch sw;
  double worst = 0.0;
  std::size_t checked = 0;
  for (SolverKind solver : {SolverKind::kEuler, SolverKind::kRk4}) {
    ModelConfig c;
    c.encoder = EncoderKind::kAttention;
    c.solver = solver;
    c.d_model = 8;
    c.heads = 2;
    c.latent = 8;
    c.kernel_hidden = {8, 8};
    ForecastModel model = build_model(c);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (const auto& [name, t] : model.params.entries()) {
      Tensor p = t;
      for (auto& x : p.mutable_values()) x += 0.1 * u(rng);
    }
    model.norm.force_scale = Tensor::vector({1.5, 0.7});
    model.norm.rate_scale = Tensor::vector({2.0, 0.5});
    auto random = [&](Shape s) {
      std::vector<double> v(shape_numel(s));
      for (auto& x : v) x = u(rng);
      return Tensor(std::move(s), std::move(v));
    };
    const Tensor x = random({10, c.n_in}), f0 = random({c.f_out}), target = random({10, c.f_out});
    const GradCheckResult r = grad_check(
        [&](std::span<const Tensor>) { return mse_loss(predict(model, x, f0), target); }, model.params.tensors(), 1e-5);
    worst = std::max(worst, r.max_relative_error);
    checked += r.entries_checked;
  }
  const double t = sw.seconds();
  return {worst < 1e-4 && t < 30.0,
          "max relative error " + num(worst) + " over " + std::to_string(checked) + " entries, " + num(t) + " s"};
}

Outcome adjoint_equivalence() {
  Stopwatch sw;
  const std::size_t f = 3, nc = 2, steps = 50;
  ParamRegistry reg;
  Initializer init(21);
  const MLPBlock mlp = MLPBlock::create(reg, "f", {f + nc, 16, f}, Activation::kTanh, init);
  const FunctionKernel k(
      [mlp](const Tensor& s, const Tensor& u, double) { return mlp_forward(concat({s, u}, 0), mlp); }, reg.tensors());
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  auto random = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = ud(rng);
    return Tensor(std::move(s), std::move(v));
  };
  const Tensor u = random({steps, nc});
  const Tensor f0 = random({f});
  const Tensor target = random({steps, f});
  const TimeGrid grid{0.0, 0.01, steps};
  double worst_rel = 0.0, worst_cos = 1.0;
  for (SolverKind s : {SolverKind::kEuler, SolverKind::kRk4}) {
    const Tensor traj = integrate(s, f0, k, grid, u);
    const Tensor loss = mean(square(sub(traj, target)));
    std::vector<double> dl(traj.size());
    for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = 2.0 * (traj[i] - target[i]) / static_cast<double>(dl.size());
    const AdjointGradients adj = adjoint_backward(s, traj.detach(), f0, k, grid, u, Tensor(traj.shape(), dl));
    const GradientMap g = backward(loss);
    double dot = 0.0, na = 0.0, nb = 0.0, diff = 0.0, ref = 0.0;
    const auto params = reg.tensors();
    for (std::size_t p = 0; p < params.size(); ++p) {
      const auto b = g.get(params[p]);
      for (std::size_t e = 0; e < b.size(); ++e) {
        const double a = adj.params[p][e];
        dot += a * b[e];
        na += a * a;
        nb += b[e] * b[e];
        diff = std::max(diff, std::abs(a - b[e]));
        ref = std::max(ref, std::abs(b[e]));
      }
    }
    worst_rel = std::max(worst_rel, diff / ref);
    worst_cos = std::min(worst_cos, dot / std::sqrt(na * nb));
  }
  const double t = sw.seconds();
  return {worst_rel < 1e-3 && worst_cos > 0.999 && t < 30.0,
          "relative difference " + num(worst_rel) + ", cosine " + std::to_string(worst_cos) + ", " + num(t) + " s"};
}

struct TargetReached {};

Outcome overfit_capability() {
  Stopwatch sw;
  GenOptions o;
  o.seed = 0;
  const Dataset one = gen_task1(Task::k1_1, o).subset({0});
  ForecastModel model = build_model(preset_model(Preset::kDesk, EncoderKind::kAttention, SolverKind::kRk4, 4, 2, 0));
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_steps = 5000;
  cfg.max_epochs = 5000;
  cfg.early_stop_patience = 5000;
  double last = 0.0;
  std::size_t steps = 0;
  TrainOutputs out;
  out.on_epoch = [&](const EpochRecord& r) {
    last = r.train_loss;
    steps = r.epoch;
    if (r.train_loss < 1e-2) throw TargetReached{};
  };
  bool reached = false;
  try {
    train(model, one, Dataset{}, cfg, out);
  } catch (const TargetReached&) {
    reached = true;
  }
  const double t = sw.seconds();
  return {reached && t < 120.0,
          "training MSE " + num(last) + " N^2 after " + std::to_string(steps) + " steps, " + num(t) + " s"};
}

// Trains the Task 1 model used by the generalization and noise criteria on `train`/`val` with
// a step-down learning rate.
ForecastModel fit_task1(const Dataset& train_set, const Dataset& val_set) {
  ForecastModel model = build_model(preset_model(Preset::kDesk, EncoderKind::kMlp, SolverKind::kEuler, 4, 2, 0));
  const std::vector<std::pair<std::size_t, double>> phases{{600, 3e-3}, {600, 3e-4}};
  for (std::size_t i = 0; i < phases.size(); ++i) {
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.max_epochs = phases[i].first;
    cfg.learning_rate = phases[i].second;
    cfg.early_stop_patience = phases[i].first;
    cfg.fit_normalization = i == 0;
    cfg.seed = i;
    train(model, train_set, val_set, cfg, {});
  }
  return model;
}

Outcome generalization() {
  Stopwatch sw;
  GenOptions o;
  o.seed = 0;
  const Dataset d = gen_task1(Task::k1_1, o);
  const SplitAssignment sp = split_dataset(d, SplitRatios{}, 0);
  const ForecastModel model = fit_task1(d.subset(sp.train), d.subset(sp.val));
  const Dataset test = d.subset(sp.test);
  const Tensor y = test.targets();
  const double rmse = pooled_rmse(predict_dataset(model, test), y);
  const auto sd = axis_std(y);
  const double floor = *std::min_element(sd.begin(), sd.end());
  const double t = sw.seconds();
  return {rmse < 0.05 * floor && t < 900.0, "held-out RMSE " + num(rmse) + " N = " + num(100 * rmse / floor) +
                                                "% of the smallest axis std (" + num(sd[0]) + ", " + num(sd[1]) +
                                                " N), " + num(t) + " s"};
}

Outcome noise_robustness() {
  Stopwatch sw;
  GenOptions o;
  o.seed = 0;
  const Dataset clean = gen_task1(Task::k1_2, o);
  const Dataset noisy = gen_task1(Task::k1_3, o);
  const SplitAssignment sp = split_dataset(clean, SplitRatios{}, 0);
  const Dataset test = clean.subset(sp.test);
  const Tensor y = test.targets();
  const ForecastModel m_clean = fit_task1(clean.subset(sp.train), clean.subset(sp.val));
  const ForecastModel m_noisy = fit_task1(noisy.subset(sp.train), noisy.subset(sp.val));
  const double r_clean = pooled_rmse(predict_dataset(m_clean, test), y);
  const double r_noisy = pooled_rmse(predict_dataset(m_noisy, test), y);
  const double t = sw.seconds();
  return {r_noisy <= 2.0 * r_clean && t < 1200.0, "clean-target RMSE: noisy-trained " + num(r_noisy) +
                                                       " N, clean-trained " + num(r_clean) + " N (ratio " +
                                                       num(r_noisy / r_clean) + "), " + num(t) + " s"};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    if (!line.empty() && line.back() == ',') row.emplace_back();
    rows.push_back(row);
  }
  return rows;
}

bool finite_cell(const std::string& s) {
  if (s.empty()) return false;
  std::string v = s;
  if (v.size() > 2 && v.substr(v.size() - 2) == "ms") v.resize(v.size() - 2);
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  return end == v.c_str() + v.size() && std::isfinite(d);
}

Outcome bench_tables() {
  Stopwatch sw;
  const fs::path a = g_work / "bench_a";
  const int rc = run_cli("bench --suite all --preset desk --seed 0 --threads 1 --out " + a.string(), g_work / "bench_a.log");
  const double t_all = sw.seconds();
  std::string why;

  const auto t1 = read_csv(a / "table1.csv");
  const std::vector<std::string> t1_head{"Models", "MAE-S", "RMSE-S", "MAE-C", "RMSE-C", "MAE-N", "RMSE-N"};
  const std::vector<std::string> t1_rows{"MLP-ODE-euler", "Attention-ODE-euler", "MLP-ODE-RK4", "Attention-ODE-RK4"};
  if (rc != 0) why += " exit " + std::to_string(rc) + ";";
  if (t1.size() != 5 || t1[0] != t1_head) {
    why += " table1 layout;";
  } else {
    for (std::size_t r = 1; r < 5; ++r) {
      if (t1[r].size() != 7 || t1[r][0] != t1_rows[r - 1]) why += " table1 row " + std::to_string(r) + ";";
      for (std::size_t c = 1; c < t1[r].size(); ++c)
        if (!finite_cell(t1[r][c])) why += " table1 " + t1[r][0] + "/" + t1_head[c] + "=" + t1[r][c] + ";";
    }
  }
  const auto t4 = read_csv(a / "table4.csv");
  const std::vector<std::string> t4_head{"Metric", "MLP-ODE", "Attention-ODE", "LSTM"};
  const std::vector<std::string> t4_rows{"Time", "Parameters", "MAE", "RMSE"};
  if (t4.size() != 5 || t4[0] != t4_head) {
    why += " table4 layout;";
  } else {
    for (std::size_t r = 1; r < 5; ++r) {
      if (t4[r].size() != 4 || t4[r][0] != t4_rows[r - 1]) why += " table4 row " + std::to_string(r) + ";";
      for (std::size_t c = 1; c < t4[r].size(); ++c)
        if (!finite_cell(t4[r][c])) why += " table4 " + t4[r][0] + "/" + t4_head[c] + "=" + t4[r][c] + ";";
    }
  }

  // Reproducibility: the whole grid again from scratch with the same seed. Timing is hardware
  // bound, so the Time row of Table IV is left out of the comparison.
  const fs::path b = g_work / "bench_b";
  const int rc_b =
      run_cli("bench --suite all --preset desk --seed 0 --threads 1 --out " + b.string(), g_work / "bench_b.log");
  const auto t4b = read_csv(b / "table4.csv");
  bool same = rc_b == 0 && t4b.size() == t4.size() && read_csv(b / "table1.csv") == t1;
  for (std::size_t r = 2; same && r < t4.size(); ++r) same = t4[r] == t4b[r];
  same = same && same_tree(a / "data", b / "data");
  if (!same) why += " rerun differs;";
  const double t = sw.seconds();
  if (t_all >= 2700.0) why += " over 45 min;";
  return {why.empty(), "bench --suite all " + num(t_all / 60) + " min, rerun identical: " +
                           (same ? "yes" : "no") + (why.empty() ? "" : ";" + why) + " (" + num(t / 60) + " min total)"};
}

Outcome oracle_sanity() {
  const OracleParams p;
  double worst = 0.0;
  const Wrench w = steady_wrench(TowingCondition::shared(0.0, 0.0, {0.5, 0.0, 0.0}), p);
  worst = std::max(worst, std::abs(w[0] + 19.25));
  for (int a = 1; a < 6; ++a) worst = std::max(worst, std::abs(w[a]));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double torque = 0.0, quad = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = TowingCondition::shared(2.6 * u(rng), 2.6 * u(rng), {0.5 * u(rng), 0.5 * u(rng), 0.0});
    const Wrench a = steady_wrench(c, p);
    torque = std::max(torque, std::abs(a[5]));
    for (double k : {0.5, 2.0, 3.0}) {
      auto ck = c;
      for (auto& v : ck.v) v *= k;
      const Wrench b = steady_wrench(ck, p);
      for (int i = 0; i < 6; ++i) quad = std::max(quad, std::abs(b[i] - k * k * a[i]));
    }
  }
  const bool pass = worst < 1e-10 && torque < 1e-10 && quad < 1e-10;
  return {pass, "Fx " + std::to_string(w[0]) + " N (error " + num(std::abs(w[0] + 19.25)) + "), max yaw torque " +
                    num(torque) + ", speed scaling error " + num(quad)};
}

Outcome determinism() {
  const fs::path d = g_work / "det";
  const std::string model = " --d-model 16 --heads 2 --latent 16 --hidden 16,16 --max-epochs 3 --seed 5 --threads 1";
  int bad = 0;
  for (const char* tag : {"1", "2"}) {
    const std::string s = tag;
    bad += run_cli("gen-data --task 1.2 --seed 5 --trajectories 40 --threads 1 --out " + (d / ("data" + s)).string(),
                   d.string() + ".log") != 0;
    bad += run_cli("train --data " + (d / "data1").string() + model + " --out " + (d / ("train" + s)).string(),
                   d.string() + ".log") != 0;
    bad += run_cli("eval --checkpoint " + (d / "train1" / "model.ckpt").string() + " --data " +
                       (d / "data1").string() + " --threads 1 --out " + (d / ("eval" + s)).string(),
                   d.string() + ".log") != 0;
  }
  if (bad) return {false, std::to_string(bad) + " commands failed, see " + d.string() + ".log"};
  std::size_t nd = 0, nt = 0, ne = 0;
  const bool data = same_tree(d / "data1", d / "data2", &nd);
  // train_log.jsonl records wall time, so only the checkpoint is compared.
  const std::string c1 = slurp(d / "train1" / "model.ckpt");
  const bool ckpt = !c1.empty() && c1 == slurp(d / "train2" / "model.ckpt");
  nt = c1.size();
  const bool eval = same_tree(d / "eval1", d / "eval2", &ne);
  return {data && ckpt && eval, "identical files: datasets " + std::string(data ? "yes" : "no") + " (" +
                                    std::to_string(nd) + "), checkpoints " + (ckpt ? "yes" : "no") + " (" +
                                    std::to_string(nt) + " bytes), metrics " + (eval ? "yes" : "no") + " (" +
                                    std::to_string(ne) + ")"};
}

Outcome metric_identities() {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> dim(1, 6);
  double worst = 0.0;
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = dim(rng), l = dim(rng), f = dim(rng);
    const double s = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    std::normal_distribution<double> g(0.0, s);
    std::vector<double> pv(b * l * f), tv(b * l * f);
    for (auto& v : pv) v = g(rng);
    for (auto& v : tv) v = g(rng);
    const MetricsReport m = compute_metrics(Tensor({b, l, f}, pv), Tensor({b, l, f}, tv));
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      abs_sum += std::abs(pv[i] - tv[i]);
      sq_sum += (pv[i] - tv[i]) * (pv[i] - tv[i]);
    }
    const double n = static_cast<double>(pv.size());
    const double mae = abs_sum / n, rmse = std::sqrt(sq_sum / n);
    worst = std::max({worst, std::abs(m.mae - mae) / std::max(1.0, mae), std::abs(m.rmse - rmse) / std::max(1.0, rmse)});
    if (m.rmse < m.mae) ++violations;
  }
  return {worst <= 1e-12 && violations == 0,
          "max deviation from the naive loop " + num(worst) + ", rmse < mae in " + std::to_string(violations) + " of 1000"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  g_work = fs::temp_directory_path() / "hydroode_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only N[,N...]] [--work DIR]\n";
      return 2;
    }
  }
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"integrator accuracy", integrator_accuracy},
      {"convergence order", convergence_order},
      {"gradient correctness", gradient_correctness},
      {"adjoint equivalence", adjoint_equivalence},
      {"overfit capability", overfit_capability},
      {"generalization", generalization},
      {"noise robustness", noise_robustness},
      {"benchmark tables", bench_tables},
      {"oracle sanity", oracle_sanity},
      {"determinism", determinism},
      {"metric identities", metric_identities},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
