#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hydroode/evalbench.hpp"

using namespace hode;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool parses_as_xml(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_xml(in, tree);
  } catch (const std::exception&) {
    return false;
  }
  return tree.count("svg") == 1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("metric examples") {
  const Tensor a = Tensor::matrix({{1.0, -2.0}, {0.5, 4.0}});
  MetricsReport same = compute_metrics(a, a);
  CHECK(same.mae == 0.0);
  CHECK(same.rmse == 0.0);

  const MetricsReport m = compute_metrics(Tensor::vector({0.0, 0.0}), Tensor::vector({3.0, 4.0}));
  CHECK(m.mae == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(m.rmse == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));

  const Tensor shifted = Tensor::matrix({{1.3, -1.7}, {0.8, 4.3}});
  const MetricsReport c = compute_metrics(shifted, a);
  CHECK(c.mae == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(c.rmse == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(c.mae_axis.size() == 2);
  CHECK(c.num_samples == 2);

  CHECK_THROWS_AS(compute_metrics(a, Tensor::vector({1.0, 2.0})), DimensionError);
  CHECK_THROWS_AS(compute_metrics(Tensor::zeros({0, 2}), Tensor::zeros({0, 2})), std::invalid_argument);
}

TEST_CASE("metrics agree with a naive loop and satisfy rmse >= mae") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = dim(rng), l = dim(rng), f = dim(rng);
    const double s = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    const Tensor p = random_tensor({b, l, f}, rng, s), t = random_tensor({b, l, f}, rng, s);
    const MetricsReport m = compute_metrics(p, t);

    double abs_all = 0.0, sq_all = 0.0;
    for (std::size_t k = 0; k < f; ++k) {
      double abs_k = 0.0, sq_k = 0.0;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < l; ++j) {
          const double e = p.at({i, j, k}) - t.at({i, j, k});
          abs_k += std::abs(e);
          sq_k += e * e;
        }
      abs_all += abs_k;
      sq_all += sq_k;
      const double n = static_cast<double>(b * l);
      CHECK(std::abs(m.mae_axis[k] - abs_k / n) <= 1e-12 * std::max(1.0, abs_k / n));
      CHECK(std::abs(m.rmse_axis[k] - std::sqrt(sq_k / n)) <= 1e-12 * std::max(1.0, std::sqrt(sq_k / n)));
      CHECK(m.rmse_axis[k] >= m.mae_axis[k]);
    }
    const double n = static_cast<double>(b * l * f);
    CHECK(std::abs(m.mae - abs_all / n) <= 1e-12 * std::max(1.0, abs_all / n));
    CHECK(std::abs(m.rmse - std::sqrt(sq_all / n)) <= 1e-12 * std::max(1.0, std::sqrt(sq_all / n)));
    CHECK(m.rmse >= m.mae);
  }
}

TEST_CASE("report construction rejects rmse below mae") {
  MetricsReport m;
  m.mae = 2.0;
  m.rmse = 1.0;
  CHECK_THROWS_AS(m.check(), std::logic_error);
}

TEST_CASE("inference timing") {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.latent = 16;
  c.kernel_hidden = {32, 32};
  const ForecastModel m = build_model(c);
  const Tensor f0 = Tensor::vector({1.0, -1.0});

  const TimingReport one = time_inference(m, Tensor::zeros({20, 4}), f0, 1, 0);
  CHECK(one.mean_ms == one.median_ms);
  CHECK(one.median_ms == one.p95_ms);
  CHECK(!one.hardware.empty());
  CHECK(one.threads == 1);

  const TimingReport shorter = time_inference(m, Tensor::zeros({100, 4}), f0, 15, 2);
  const TimingReport longer = time_inference(m, Tensor::zeros({200, 4}), f0, 15, 2);
  CHECK(shorter.p95_ms >= shorter.median_ms);
  CHECK(longer.mean_ms > shorter.mean_ms);
  CHECK_THROWS_AS(time_inference(m, Tensor::zeros({5, 4}), f0, 0, 0), std::invalid_argument);
}

TEST_CASE("benchmark plan mirrors the two tables") {
  const auto plan = bench_plan(Suite::kAll);
  std::size_t t1 = 0, t4 = 0;
  for (const auto& s : plan) (s.table == "I" ? t1 : t4)++;
  CHECK(t1 == 12);
  CHECK(t4 == 3);
  CHECK(bench_plan(Suite::kTask1).size() == 12);
  CHECK(bench_plan(Suite::kTask2).size() == 3);
  for (const auto& s : bench_plan(Suite::kTask2)) {
    CHECK(s.task == Task::k2);
    CHECK(s.solver == SolverKind::kEuler);
  }

  const ModelConfig paper = preset_model(Preset::kPaper, EncoderKind::kAttention, SolverKind::kRk4, 35, 6, 0);
  CHECK(paper.kernel_hidden == std::vector<std::size_t>{512, 512, 512});
  CHECK(paper.heads == 4);
  CHECK(preset_model(Preset::kPaper, EncoderKind::kLstm, SolverKind::kEuler, 35, 6, 0).lstm_hidden == 256);
  const ModelConfig desk = preset_model(Preset::kDesk, EncoderKind::kAttention, SolverKind::kRk4, 4, 2, 0);
  CHECK(desk.d_model == 64);
  CHECK(desk.kernel_hidden == std::vector<std::size_t>{64, 64, 64});
  CHECK(preset_model(Preset::kDesk, EncoderKind::kLstm, SolverKind::kEuler, 4, 2, 0).lstm_hidden == 64);
  CHECK_THROWS_AS(parse_preset("huge"), std::invalid_argument);
  CHECK_THROWS_AS(parse_suite("task3"), std::invalid_argument);
}

TEST_CASE("report files round trip") {
  BenchmarkTable t;
  BenchCell ok;
  ok.table = "I";
  ok.model = "Attention-ODE";
  ok.solver = "rk4";
  ok.task = "1.1";
  ok.params = 38018;
  ok.seed = 4;
  ok.time_ms_mean = 1.0 / 3.0;
  MetricsReport m;
  m.mae = 0.1 + 0.2;
  m.rmse = std::sqrt(2.0);
  m.mae_axis = {1e-17, 0.7};
  m.rmse_axis = {2e-17, std::acos(-1.0)};
  ok.metrics = m;
  ok.dt = 0.02;
  ok.f = 2;
  ok.sample_pred = {0.0, 1.0, 0.5, 1.5, 1.0, 2.0};
  ok.sample_truth = {0.1, 1.1, 0.6, 1.4, 0.9, 2.2};
  BenchCell failed = ok;
  failed.table = "IV";
  failed.model = "LSTM";
  failed.solver = "-";
  failed.task = "2";
  failed.metrics.reset();
  failed.failure = "loss diverged, \"nan\" in epoch 3";
  t.cells = {ok, failed};

  const fs::path dir = fresh_dir("hydroode_report_test");
  emit_report(t, dir);
  const auto back = read_results_csv(dir / "results.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].metrics->mae == m.mae);
  CHECK(back[0].metrics->rmse == m.rmse);
  CHECK(back[0].metrics->mae_axis == m.mae_axis);
  CHECK(back[0].metrics->rmse_axis == m.rmse_axis);
  CHECK(back[0].time_ms_mean == ok.time_ms_mean);
  CHECK(back[0].params == 38018);
  CHECK(back[0].seed == 4);
  CHECK(!back[1].ok());
  CHECK(back[1].failure == failed.failure);
  CHECK(slurp(dir / "results.csv").find("FAIL:loss diverged") != std::string::npos);
  CHECK(slurp(dir / "table4.csv").find("FAIL:") != std::string::npos);

  const auto j = nlohmann::json::parse(slurp(dir / "results.json"));
  CHECK(j.at("cells").size() == 2);
  CHECK(j["cells"][1]["failure"].get<std::string>().rfind("FAIL:", 0) == 0);

  const std::string svg = slurp(dir / "plots" / "Attention-ODE_rk4_task1_1.svg");
  CHECK(parses_as_xml(svg));
  CHECK(svg.find("Fx (N)") != std::string::npos);
  CHECK(svg.find("time (s)") != std::string::npos);
  CHECK(!parses_as_xml("<svg><g></svg>"));
  fs::remove_all(dir);
}

TEST_CASE("svg rejects mismatched series") {
  CHECK_THROWS_AS(trajectory_svg("x", 0.1, 2, {1.0, 2.0}, {1.0}), DimensionError);
  CHECK(parses_as_xml(trajectory_svg("a < b & c", 0.1, 6, std::vector<double>(12, 1.0), std::vector<double>(12, 1.0),
                                     output_axis_names(6))));
}

TEST_CASE("small benchmark run is complete and reproducible") {
  BenchOptions o;
  o.suite = Suite::kAll;
  o.seed = 3;
  o.task1_trajectories = 20;
  o.task2_trajectories = 10;
  o.timing_repeats = 2;
  o.timing_warmup = 0;
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch_size = 8;
  o.train = tc;
  const fs::path dir = fresh_dir("hydroode_bench_test");
  o.data_root = dir / "data";
  std::size_t callbacks = 0;
  o.on_cell = [&](const BenchmarkTable& t) {
    ++callbacks;
    emit_report(t, dir / "a");
  };
  const BenchmarkTable a = run_benchmark(o);
  CHECK(callbacks == 15);
  REQUIRE(a.cells.size() == 15);
  for (const auto& c : a.cells) {
    INFO(c.model << " " << c.solver << " " << c.task << " " << c.failure);
    CHECK(c.ok());
    CHECK(std::isfinite(c.metrics->mae));
    CHECK(std::isfinite(c.metrics->rmse));
    CHECK(c.params > 0);
  }
  CHECK(fs::exists(dir / "data" / "task2" / "manifest.json"));

  // Second run reads the stored datasets and must agree cell for cell.
  o.on_cell = nullptr;
  const BenchmarkTable b = run_benchmark(o);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].metrics->mae == b.cells[i].metrics->mae);
    CHECK(a.cells[i].metrics->rmse == b.cells[i].metrics->rmse);
  }

  const std::string t1 = slurp(dir / "a" / "table1.csv");
  CHECK(t1.rfind("Models,MAE-S,RMSE-S,MAE-C,RMSE-C,MAE-N,RMSE-N\n", 0) == 0);
  CHECK(std::count(t1.begin(), t1.end(), '\n') == 5);
  const std::string t4 = slurp(dir / "a" / "table4.csv");
  CHECK(t4.rfind("Metric,MLP-ODE,Attention-ODE,LSTM\n", 0) == 0);
  CHECK(t4.find("\nParameters,") != std::string::npos);

  // Invalid training settings fail every cell without aborting the run.
  tc.batch_size = 0;
  o.train = tc;
  o.suite = Suite::kTask2;
  const BenchmarkTable bad = run_benchmark(o);
  CHECK(bad.cells.size() == 3);
  for (const auto& c : bad.cells) CHECK(!c.ok());
  fs::remove_all(dir);
}
