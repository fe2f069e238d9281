#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "hydroode/gradcheck.hpp"
#include "hydroode/models.hpp"
#include "hydroode/ops.hpp"

using namespace hode;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

ModelConfig tiny(EncoderKind enc, SolverKind solver = SolverKind::kRk4) {
  ModelConfig c;
  c.encoder = enc;
  c.n_in = 4;
  c.f_out = 2;
  c.d_model = 8;
  c.heads = 2;
  c.latent = 8;
  c.kernel_hidden = {8, 8};
  c.solver = solver;
  c.lstm_hidden = 6;
  c.seed = 3;
  return c;
}

// Gives the zero-initialized output layer small random values so dynamics are non-trivial.
void perturb_all(ForecastModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto t : m.params.tensors())
    for (auto& v : t.mutable_values()) v += n(rng);
}

std::size_t linear(std::size_t in, std::size_t out) { return in * out + out; }

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("hode_models_" + name); }

}  // namespace

TEST_CASE("build_model: parameter count follows the architecture") {
  ModelConfig c;
  c.encoder = EncoderKind::kAttention;
  c.n_in = 4;
  c.f_out = 2;
  c.d_model = 64;
  c.heads = 4;
  c.latent = 64;
  c.kernel_hidden = {64, 64, 64};
  const ForecastModel m = build_model(c);
  const std::size_t encoder = linear(4, 64) + 4 * linear(64, 64) + linear(64, 64) + linear(64, 64);
  const std::size_t kernel = linear(2 + 64, 64) + linear(64, 64) + linear(64, 64) + linear(64, 2);
  CHECK(count_params(m.params) == encoder + kernel);
  CHECK(count_params(m.params) == 38018);

  c.encoder = EncoderKind::kMlp;
  CHECK(count_params(build_model(c).params) == linear(4, 64) + linear(64, 64) + kernel);

  c.time_input = true;
  CHECK(count_params(build_model(c).params) == linear(4, 64) + linear(64, 64) + kernel + 64);

  c.encoder = EncoderKind::kLstm;
  c.lstm_hidden = 64;
  c.lstm_layers = 2;
  CHECK(count_params(build_model(c).params) == linear(6 + 64, 256) + linear(128, 256) + linear(64, 2));

  c.encoder = EncoderKind::kAttention;
  c.heads = 3;
  CHECK_THROWS_AS(build_model(c), DimensionError);
}

TEST_CASE("build_model is deterministic in the seed") {
  const ForecastModel a = build_model(tiny(EncoderKind::kAttention));
  const ForecastModel b = build_model(tiny(EncoderKind::kAttention));
  ModelConfig other = tiny(EncoderKind::kAttention);
  other.seed = 4;
  const ForecastModel c = build_model(other);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params.entries()[i].second.data() == b.params.entries()[i].second.data());
    any_diff |= a.params.entries()[i].second.data() != c.params.entries()[i].second.data();
  }
  CHECK(any_diff);
}

TEST_CASE("encoders: locality of the MLP encoder, mixing of attention") {
  const Tensor x = random_tensor({6, 4}, 1);
  std::vector<double> changed = x.data();
  for (std::size_t k = 0; k < 4; ++k) changed[3 * 4 + k] += 0.5;
  const Tensor x2(x.shape(), changed);

  const ForecastModel mlp = build_model(tiny(EncoderKind::kMlp));
  const Tensor a = encode_conditions(mlp, x), b = encode_conditions(mlp, x2);
  REQUIRE(a.shape() == Shape{6, 8});
  for (std::size_t i = 0; i < 6; ++i) {
    bool same = true;
    for (std::size_t k = 0; k < 8; ++k) same &= a.at({i, k}) == b.at({i, k});
    CHECK(same == (i != 3));
  }

  const ForecastModel att = build_model(tiny(EncoderKind::kAttention));
  const Tensor c = encode_conditions(att, x), d = encode_conditions(att, x2);
  for (std::size_t i = 0; i < 6; ++i) {
    double diff = 0.0;
    for (std::size_t k = 0; k < 8; ++k) diff += std::abs(c.at({i, k}) - d.at({i, k}));
    CHECK(diff > 0.0);
  }

  for (const auto* m : {&mlp, &att}) {
    CHECK(encode_conditions(*m, random_tensor({1, 4}, 2)).shape() == Shape{1, 8});
    CHECK_THROWS_AS(encode_conditions(*m, random_tensor({5, 3}, 2)), DimensionError);
  }
}

TEST_CASE("fresh ODE models predict constant F0") {
  const Tensor f0 = Tensor::vector({-12.5, 3.75});
  for (EncoderKind enc : {EncoderKind::kAttention, EncoderKind::kMlp}) {
    for (SolverKind s : {SolverKind::kEuler, SolverKind::kRk4}) {
      ForecastModel m = build_model(tiny(enc, s));
      m.norm.force_scale = Tensor::vector({7.0, 2.0});
      m.norm.rate_scale = Tensor::vector({30.0, 5.0});
      const Tensor y = predict_forces(m, random_tensor({20, 4}, 4), f0, {0.0, 0.02, 20});
      REQUIRE(y.shape() == Shape{20, 2});
      for (std::size_t i = 0; i < 20; ++i) {
        if (s == SolverKind::kEuler) {
          CHECK(y.at({i, 0}) == f0[0]);
          CHECK(y.at({i, 1}) == f0[1]);
        } else {
          CHECK(std::abs(y.at({i, 0}) - f0[0]) <= 1e-14 * std::abs(f0[0]));
          CHECK(std::abs(y.at({i, 1}) - f0[1]) <= 1e-14 * std::abs(f0[1]));
        }
      }
    }
  }
}

TEST_CASE("prediction shape contracts") {
  ModelConfig c = tiny(EncoderKind::kAttention);
  ForecastModel m = build_model(c);
  CHECK(predict_forces(m, random_tensor({100, 4}, 1), Tensor::vector({0, 0}), {0.0, 0.02, 100}).shape() ==
        Shape{100, 2});
  CHECK(predict(m, random_tensor({3, 50, 4}, 1), Tensor::zeros({3, 2})).shape() == Shape{3, 50, 2});
  CHECK_THROWS_AS(predict_forces(m, random_tensor({10, 4}, 1), Tensor::vector({0, 0}), {0.0, 0.02, 11}),
                  DimensionError);
  CHECK_THROWS_AS(predict(m, random_tensor({10, 4}, 1), Tensor::vector({0, 0, 0})), DimensionError);

  c.n_in = 35;
  c.f_out = 6;
  const ForecastModel big = build_model(c);
  CHECK(predict(big, random_tensor({400, 35}, 2), Tensor::zeros({6})).shape() == Shape{400, 6});

  const ForecastModel lstm = build_model(tiny(EncoderKind::kLstm));
  CHECK(predict_forces_lstm(lstm, random_tensor({50, 4}, 3), Tensor::vector({1, 2})).shape() == Shape{50, 2});
  CHECK_THROWS(predict_forces(lstm, random_tensor({5, 4}, 3), Tensor::vector({1, 2}), {0.0, 0.02, 5}));
}

TEST_CASE("batched prediction equals per-trajectory prediction") {
  for (EncoderKind enc : {EncoderKind::kAttention, EncoderKind::kMlp, EncoderKind::kLstm}) {
    ModelConfig c = tiny(enc);
    c.time_input = true;
    ForecastModel m = build_model(c);
    perturb_all(m, 9);
    const Tensor x = random_tensor({3, 7, 4}, 10);
    const Tensor f0 = random_tensor({3, 2}, 11);
    const Tensor batch = predict(m, x, f0, 0.5);
    for (std::size_t b = 0; b < 3; ++b) {
      const Tensor one = predict(m, reshape(slice(x, 0, b, 1), {7, 4}), reshape(slice(f0, 0, b, 1), {2}), 0.5);
      for (std::size_t i = 0; i < one.size(); ++i) CHECK(std::abs(one[i] - batch[b * one.size() + i]) < 1e-12);
    }
  }
}

TEST_CASE("zero-weight LSTM predicts zeros") {
  ForecastModel m = build_model(tiny(EncoderKind::kLstm));
  for (auto t : m.params.tensors())
    for (auto& v : t.mutable_values()) v = 0.0;
  const Tensor y = predict_forces_lstm(m, random_tensor({12, 4}, 1), Tensor::vector({4, -1}));
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("euler MLP-ODE is causal in the conditions") {
  ModelConfig c = tiny(EncoderKind::kMlp, SolverKind::kEuler);
  ForecastModel m = build_model(c);
  perturb_all(m, 2);
  const Tensor x = random_tensor({10, 4}, 5);
  const Tensor f0 = Tensor::vector({1.0, -1.0});
  const Tensor base = predict(m, x, f0);
  for (std::size_t j : {0u, 4u, 9u}) {
    std::vector<double> changed = x.data();
    changed[j * 4] += 1.0;
    const Tensor y = predict(m, Tensor(x.shape(), changed), f0);
    for (std::size_t i = 0; i < 10; ++i) {
      const bool same = y.at({i, 0}) == base.at({i, 0}) && y.at({i, 1}) == base.at({i, 1});
      // Output row i is the state after interval i, which used condition rows 0..i.
      CHECK(same == (i < j));
    }
  }
}

TEST_CASE("end-to-end gradients pass grad_check") {
  for (EncoderKind enc : {EncoderKind::kAttention, EncoderKind::kMlp, EncoderKind::kLstm}) {
    for (SolverKind s : {SolverKind::kEuler, SolverKind::kRk4}) {
      if (enc == EncoderKind::kLstm && s == SolverKind::kEuler) continue;
      ModelConfig c = tiny(enc, s);
      c.time_input = enc == EncoderKind::kMlp;
      ForecastModel m = build_model(c);
      perturb_all(m, 13);
      m.norm.force_mean = Tensor::vector({0.3, -0.1});
      m.norm.force_scale = Tensor::vector({2.0, 0.5});
      const Tensor x = random_tensor({2, 5, 4}, 6);
      const Tensor f0 = random_tensor({2, 2}, 7);
      const Tensor target = random_tensor({2, 5, 2}, 8);
      auto loss = [&](std::span<const Tensor>) { return mean(square(sub(predict(m, x, f0), target))); };
      const auto r = grad_check(loss, m.params.tensors(), 1e-5);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("config json round trip and validation") {
  ModelConfig c = tiny(EncoderKind::kMlp, SolverKind::kEuler);
  c.kernel_hidden = {5, 7, 9};
  c.time_input = true;
  c.dt = 0.0125;
  c.seed = 123456789012345ULL;
  const nlohmann::json j = c;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.kernel_hidden == c.kernel_hidden);
  CHECK(back.seed == c.seed);
  CHECK_THROWS(nlohmann::json({{"d_modle", 3}}).get<ModelConfig>());
  CHECK_THROWS(nlohmann::json({{"encoder", "cnode"}}).get<ModelConfig>());
}

TEST_CASE("checkpoint round trip is lossless") {
  for (EncoderKind enc : {EncoderKind::kAttention, EncoderKind::kMlp, EncoderKind::kLstm}) {
    ForecastModel m = build_model(tiny(enc));
    perturb_all(m, 21);
    m.norm.x_mean = random_tensor({4}, 1);
    m.norm.x_std = random_tensor({4}, 2, 0.5, 2.0);
    m.norm.force_mean = Tensor::vector({-4.0, 0.25});
    m.norm.force_scale = Tensor::vector({3.0, 0.1});
    m.norm.rate_scale = Tensor::vector({1.0 / 3.0, 17.0});
    const auto path = temp_path("rt_" + to_string(enc) + ".ckpt");
    checkpoint_save(m, path);
    const ForecastModel back = checkpoint_load(path);
    CHECK(nlohmann::json(back.config) == nlohmann::json(m.config));
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      CHECK(back.params.entries()[i].first == m.params.entries()[i].first);
      CHECK(back.params.entries()[i].second.data() == m.params.entries()[i].second.data());
    }
    const Tensor x = random_tensor({9, 4}, 3);
    const Tensor f0 = Tensor::vector({0.3, -0.2});
    CHECK(predict(back, x, f0).data() == predict(m, x, f0).data());
    CHECK_THROWS_AS(predict(back, random_tensor({9, 5}, 3), f0), DimensionError);

    // saving again gives the same bytes
    const auto path2 = temp_path("rt2_" + to_string(enc) + ".ckpt");
    checkpoint_save(back, path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    fs::remove(path);
    fs::remove(path2);
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  const ForecastModel m = build_model(tiny(EncoderKind::kAttention));
  const auto path = temp_path("damaged.ckpt");
  checkpoint_save(m, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
  };

  for (std::size_t keep : {std::size_t{0}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    write(bytes.substr(0, keep));
    CHECK_THROWS_AS(checkpoint_load(path), CheckpointError);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write(flipped);
  CHECK_THROWS_AS(checkpoint_load(path), CheckpointError);

  std::string versioned = bytes;
  versioned[8] = 9;
  write(versioned);
  CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("version"), CheckpointError);

  std::string magic = bytes;
  magic[0] = 'X';
  write(magic);
  CHECK_THROWS_AS(checkpoint_load(path), CheckpointError);
  fs::remove(path);
  CHECK_THROWS_AS(checkpoint_load(path), std::ios_base::failure);
}
