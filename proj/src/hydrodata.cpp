#include "hydroode/hydrodata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hydroode/fileio.hpp"
#include "hydroode/parallel.hpp"

namespace hode {

// ---- oracle ----

void OracleParams::validate() const {
  if (!(rho > 0.0)) throw std::invalid_argument("oracle density must be positive");
  if (!(tau_relax > 0.0)) throw std::invalid_argument("oracle relaxation time must be positive");
  for (double a : body_area)
    if (a < 0.0) throw std::invalid_argument("oracle body areas must be nonnegative");
  for (double a : leg_area)
    if (a < 0.0) throw std::invalid_argument("oracle leg area coefficients must be nonnegative");
}

void to_json(nlohmann::json& j, const OracleParams& p) {
  j = nlohmann::json{{"rho", p.rho},           {"cd", p.cd},
                     {"body_area", p.body_area}, {"leg_area", p.leg_area},
                     {"lever_arms", p.lever_arms}, {"tau_relax", p.tau_relax},
                     {"joint_limit", p.joint_limit}};
}

void from_json(const nlohmann::json& j, OracleParams& p) {
  j.at("rho").get_to(p.rho);
  j.at("cd").get_to(p.cd);
  j.at("body_area").get_to(p.body_area);
  j.at("leg_area").get_to(p.leg_area);
  j.at("lever_arms").get_to(p.lever_arms);
  j.at("tau_relax").get_to(p.tau_relax);
  j.at("joint_limit").get_to(p.joint_limit);
}

TowingCondition TowingCondition::shared(double q2, double q3, const Vec3& v, const Vec3& omega) {
  TowingCondition c;
  c.q2.fill(q2);
  c.q3.fill(q3);
  c.v = v;
  c.omega = omega;
  return c;
}

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

Vec3 drag(const Vec3& v, const Vec3& cd, const Vec3& area, double rho) {
  const double speed = norm(v);
  Vec3 f;
  for (int a = 0; a < 3; ++a) f[a] = -0.5 * rho * cd[a] * area[a] * speed * v[a];
  return f;
}

}  // namespace

Wrench steady_wrench(const TowingCondition& cond, const OracleParams& p) {
  Wrench w{};
  const Vec3 body = drag(cond.v, p.cd, p.body_area, p.rho);
  for (int a = 0; a < 3; ++a) w[a] = body[a];
  for (std::size_t k = 0; k < 4; ++k) {
    const double area = p.leg_area[0] + p.leg_area[1] * std::abs(std::sin(cond.q2[k])) +
                        p.leg_area[2] * std::abs(std::sin(cond.q2[k] + cond.q3[k]));
    const Vec3& r = p.lever_arms[k];
    const Vec3 omega_r = cross(cond.omega, r);
    const Vec3 vk{cond.v[0] + omega_r[0], cond.v[1] + omega_r[1], cond.v[2] + omega_r[2]};
    const Vec3 fk = drag(vk, p.cd, {area, area, area}, p.rho);
    const Vec3 tk = cross(r, fk);
    for (int a = 0; a < 3; ++a) {
      w[a] += fk[a];
      w[3 + a] += tk[a];
    }
  }
  return w;
}

std::vector<Wrench> relax_wrench(const std::vector<Wrench>& targets, double dt, double tau, const Wrench& w_init) {
  constexpr int kSubsteps = 4;
  const double h = dt / kSubsteps;
  std::vector<Wrench> out;
  out.reserve(targets.size());
  Wrench w = w_init;
  for (const Wrench& ss : targets) {
    for (int s = 0; s < kSubsteps; ++s) {
      for (int a = 0; a < 6; ++a) {
        auto f = [&](double y) { return (ss[a] - y) / tau; };
        const double k1 = f(w[a]);
        const double k2 = f(w[a] + h / 2 * k1);
        const double k3 = f(w[a] + h / 2 * k2);
        const double k4 = f(w[a] + h * k3);
        w[a] += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      }
    }
    out.push_back(w);
  }
  return out;
}

std::vector<Wrench> simulate_measured_wrench(const std::vector<TowingCondition>& conds, double dt,
                                             const OracleParams& p, std::optional<Wrench> w_init) {
  p.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("sampling period must be positive");
  if (conds.empty()) return {};
  std::vector<Wrench> targets;
  targets.reserve(conds.size());
  for (const auto& c : conds) targets.push_back(steady_wrench(c, p));
  return relax_wrench(targets, dt, p.tau_relax, w_init.value_or(targets.front()));
}

// ---- trajectories and datasets ----

Tensor Trajectory::inputs() const {
  return Tensor({length, n}, std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(n), x.end()));
}

Tensor Trajectory::targets() const {
  return Tensor({length, f}, std::vector<double>(forces.begin() + static_cast<std::ptrdiff_t>(f), forces.end()));
}

Tensor Trajectory::initial() const {
  return Tensor({f}, std::vector<double>(forces.begin(), forces.begin() + static_cast<std::ptrdiff_t>(f)));
}

Task parse_task(const std::string& tag) {
  if (tag == "1.1") return Task::k1_1;
  if (tag == "1.2") return Task::k1_2;
  if (tag == "1.3") return Task::k1_3;
  if (tag == "2") return Task::k2;
  throw std::invalid_argument("unknown task '" + tag + "' (expected 1.1, 1.2, 1.3 or 2)");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::k1_1: return "1.1";
    case Task::k1_2: return "1.2";
    case Task::k1_3: return "1.3";
    case Task::k2: return "2";
  }
  return "?";
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"task", m.task},
                     {"n", m.n},
                     {"f", m.f},
                     {"L", m.L},
                     {"num_trajectories", m.num_trajectories},
                     {"dt", m.dt},
                     {"oracle", m.oracle},
                     {"noise_fraction", m.noise_fraction},
                     {"noise_sigma", m.noise_sigma},
                     {"split", {{"train", m.split.train}, {"val", m.split.val}, {"test", m.split.test}}},
                     {"seed", m.seed},
                     {"files", m.files}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("task").get_to(m.task);
  j.at("n").get_to(m.n);
  j.at("f").get_to(m.f);
  j.at("L").get_to(m.L);
  j.at("num_trajectories").get_to(m.num_trajectories);
  j.at("dt").get_to(m.dt);
  j.at("oracle").get_to(m.oracle);
  j.at("noise_fraction").get_to(m.noise_fraction);
  j.at("noise_sigma").get_to(m.noise_sigma);
  j.at("seed").get_to(m.seed);
  j.at("files").get_to(m.files);
  m.split = {};
  if (j.contains("split")) {
    const auto& s = j.at("split");
    if (s.contains("train")) s.at("train").get_to(m.split.train);
    if (s.contains("val")) s.at("val").get_to(m.split.val);
    if (s.contains("test")) s.at("test").get_to(m.split.test);
  }
}

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

template <typename Get>
Tensor gather(const Dataset& d, const std::vector<std::size_t>& idx_in, Get get) {
  const auto idx = idx_in.empty() ? all_indices(d.trajectories.size()) : idx_in;
  if (idx.empty()) throw std::invalid_argument("dataset is empty");
  std::vector<double> data;
  Shape inner;
  for (auto i : idx) {
    const Tensor t = get(d.trajectories.at(i));
    if (inner.empty()) inner = t.shape();
    if (t.shape() != inner) throw DimensionError("trajectories differ in shape; cannot stack");
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  Shape shape{idx.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Tensor Dataset::inputs(const std::vector<std::size_t>& idx) const {
  return gather(*this, idx, [](const Trajectory& t) { return t.inputs(); });
}

Tensor Dataset::targets(const std::vector<std::size_t>& idx) const {
  return gather(*this, idx, [](const Trajectory& t) { return t.targets(); });
}

Tensor Dataset::initial(const std::vector<std::size_t>& idx) const {
  return gather(*this, idx, [](const Trajectory& t) { return t.initial(); });
}

Dataset Dataset::subset(const std::vector<std::size_t>& ids) const {
  Dataset out;
  out.manifest = manifest;
  out.manifest.split = {};
  out.manifest.files.clear();
  for (auto id : ids) {
    auto it = std::find_if(trajectories.begin(), trajectories.end(), [id](const Trajectory& t) { return t.id == id; });
    if (it == trajectories.end()) throw std::out_of_range("no trajectory with id " + std::to_string(id));
    out.trajectories.push_back(*it);
  }
  out.manifest.num_trajectories = out.trajectories.size();
  return out;
}

// ---- generators ----

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ index) ^ (stream * 0xD1B54A32D192ED03ULL));
}

TowingCondition task1_condition(std::size_t index, double joint_limit) {
  if (index >= kTask1Conditions) throw std::out_of_range("task 1 condition index out of range");
  static constexpr double kSpeeds[4] = {0.2, 0.3, 0.4, 0.5};
  const double speed = kSpeeds[index / 48];
  const std::size_t dir = task1_direction(index);
  auto joint = [&](std::size_t k) { return -joint_limit + 2.0 * joint_limit * static_cast<double>(k) / 3.0; };
  const double q2 = joint((index % 16) / 4);
  const double q3 = joint(index % 4);
  Vec3 v{};
  if (dir == 0) v = {speed, 0.0, 0.0};
  if (dir == 1) v = {0.0, speed, 0.0};
  if (dir == 2) v = {speed * std::numbers::sqrt2 / 2, speed * std::numbers::sqrt2 / 2, 0.0};
  return TowingCondition::shared(q2, q3, v);
}

std::size_t task1_direction(std::size_t index) { return (index / 16) % 3; }

std::array<double, 4> task1_features(const TowingCondition& c) { return {c.q2[0], c.q3[0], c.v[0], c.v[1]}; }

namespace {

std::size_t default_length(Task t) {
  switch (t) {
    case Task::k1_1: return 100;
    case Task::k1_2:
    case Task::k1_3: return 50;
    case Task::k2: return 400;
  }
  return 0;
}

// Segment index of every interval for `segments` runs with boundaries floor(k·L/segments).
std::vector<std::size_t> segment_of_interval(std::size_t length, std::size_t segments) {
  std::vector<std::size_t> seg(length);
  for (std::size_t k = 0; k < segments; ++k) {
    const std::size_t begin = k * length / segments, end = (k + 1) * length / segments;
    for (std::size_t j = begin; j < end; ++j) seg[j] = k;
  }
  return seg;
}

Trajectory make_trajectory(std::size_t id, std::size_t n, std::size_t f, std::size_t length, double dt) {
  Trajectory t;
  t.id = id;
  t.dt = dt;
  t.n = n;
  t.f = f;
  t.length = length;
  t.x.assign((length + 1) * n, 0.0);
  t.forces.assign((length + 1) * f, 0.0);
  t.cond_id.assign(length + 1, 0);
  return t;
}

// Adds N(0, σ_a) to rows 1..L of every trajectory, with σ_a = fraction × std of axis a over
// the clean rows. Returns σ.
std::vector<double> add_noise(std::vector<Trajectory>& trajs, double fraction, std::uint64_t seed) {
  const std::size_t f = trajs.front().f;
  std::vector<double> sum(f, 0.0), sq(f, 0.0);
  std::size_t count = 0;
  for (const auto& t : trajs) {
    for (std::size_t i = 1; i <= t.length; ++i) {
      for (std::size_t a = 0; a < f; ++a) sum[a] += t.forces[i * f + a];
    }
    count += t.length;
  }
  for (std::size_t a = 0; a < f; ++a) sum[a] /= static_cast<double>(count);
  for (const auto& t : trajs)
    for (std::size_t i = 1; i <= t.length; ++i)
      for (std::size_t a = 0; a < f; ++a) sq[a] += std::pow(t.forces[i * f + a] - sum[a], 2);
  std::vector<double> sigma(f);
  for (std::size_t a = 0; a < f; ++a) sigma[a] = fraction * std::sqrt(sq[a] / static_cast<double>(count));

  for (auto& t : trajs) {
    std::mt19937_64 rng(derive_seed(seed, t.id, 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 1; i <= t.length; ++i)
      for (std::size_t a = 0; a < f; ++a) t.forces[i * f + a] += sigma[a] * normal(rng);
  }
  return sigma;
}

DatasetManifest base_manifest(Task task, std::size_t n, std::size_t f, std::size_t length, std::size_t count,
                              const GenOptions& opt) {
  DatasetManifest m;
  m.task = to_string(task);
  m.n = n;
  m.f = f;
  m.L = length;
  m.num_trajectories = count;
  m.dt = opt.dt;
  m.oracle = opt.oracle;
  m.seed = opt.seed;
  return m;
}

}  // namespace

Dataset gen_task1(Task variant, const GenOptions& opt) {
  if (variant == Task::k2) throw std::invalid_argument("gen_task1 handles tasks 1.1, 1.2 and 1.3");
  opt.oracle.validate();
  if (!(opt.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const std::size_t count = opt.trajectories == 0 ? kTask1Conditions : opt.trajectories;
  const std::size_t length = opt.length == 0 ? default_length(variant) : opt.length;
  constexpr std::size_t kSegments = 5;
  const bool switching = variant != Task::k1_1;
  if (length == 0) throw std::invalid_argument("trajectory length must be positive");
  if (switching && length < kSegments) {
    throw std::invalid_argument("switching trajectories need at least " + std::to_string(kSegments) + " steps");
  }
  if (!switching && count > kTask1Conditions) {
    throw std::invalid_argument("the static task has at most " + std::to_string(kTask1Conditions) + " conditions");
  }

  std::vector<Trajectory> trajs(count);
  const auto seg = segment_of_interval(length, kSegments);
  parallel_for(count, opt.threads, [&](std::size_t k) {
    Trajectory t = make_trajectory(k, 4, 2, length, opt.dt);
    std::vector<std::size_t> picks;
    if (switching) {
      std::mt19937_64 rng(derive_seed(opt.seed, k, 0));
      std::vector<std::size_t> pool = all_indices(kTask1Conditions);
      for (std::size_t s = 0; s < kSegments; ++s) {
        std::uniform_int_distribution<std::size_t> pick(s, pool.size() - 1);
        std::swap(pool[s], pool[pick(rng)]);
        picks.push_back(pool[s]);
      }
    } else {
      picks.push_back(k);
    }
    std::vector<TowingCondition> conds(length);
    for (std::size_t j = 0; j < length; ++j) {
      const std::size_t c = picks[switching ? seg[j] : 0];
      conds[j] = task1_condition(c, opt.oracle.joint_limit);
      const auto feat = task1_features(conds[j]);
      std::copy(feat.begin(), feat.end(), t.x.begin() + static_cast<std::ptrdiff_t>((j + 1) * 4));
      t.cond_id[j + 1] = static_cast<std::int64_t>(c);
    }
    std::copy(t.x.begin() + 4, t.x.begin() + 8, t.x.begin());
    t.cond_id[0] = t.cond_id[1];
    t.group = task1_direction(picks.front());
    // The static task starts from rest; switching starts settled on its first condition.
    const std::optional<Wrench> w_init = switching ? std::nullopt : std::optional<Wrench>(Wrench{});
    const auto w0 = w_init.value_or(steady_wrench(conds.front(), opt.oracle));
    const auto w = simulate_measured_wrench(conds, opt.dt, opt.oracle, w0);
    t.forces[0] = w0[0];
    t.forces[1] = w0[1];
    for (std::size_t i = 0; i < length; ++i) {
      t.forces[(i + 1) * 2] = w[i][0];
      t.forces[(i + 1) * 2 + 1] = w[i][1];
    }
    trajs[k] = std::move(t);
  });

  Dataset d;
  d.manifest = base_manifest(variant, 4, 2, length, count, opt);
  if (variant == Task::k1_3) {
    d.manifest.noise_fraction = opt.noise_fraction;
    d.manifest.noise_sigma = add_noise(trajs, opt.noise_fraction, opt.seed);
  }
  d.trajectories = std::move(trajs);
  return d;
}

Dataset gen_task2(const GenOptions& opt) {
  opt.oracle.validate();
  if (!(opt.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const std::size_t count = opt.trajectories == 0 ? 64 : opt.trajectories;
  const std::size_t length = opt.length == 0 ? 400 : opt.length;
  constexpr std::size_t kSegments = 40;
  if (length < kSegments) throw std::invalid_argument("task 2 trajectories need at least 40 steps");
  constexpr std::size_t n = 35;
  const auto seg = segment_of_interval(length, kSegments);
  const double pi = std::numbers::pi;

  std::vector<Trajectory> trajs(count);
  parallel_for(count, opt.threads, [&](std::size_t k) {
    Trajectory t = make_trajectory(k, n, 6, length, opt.dt);
    std::mt19937_64 rng(derive_seed(opt.seed, k, 0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const double freq = uniform(0.5, 1.5);
    double amp[3], offset[3];
    for (int j = 0; j < 3; ++j) {
      amp[j] = uniform(0.2, 0.6);
      offset[j] = uniform(-0.5, 0.5);
    }
    const double leg_phase[4] = {0.0, pi, pi, 0.0};
    std::vector<Vec3> seg_v(kSegments);
    for (auto& v : seg_v) {
      const double speed = uniform(0.2, 0.5), heading = uniform(0.0, 2 * pi);
      v = {speed * std::cos(heading), speed * std::sin(heading), uniform(-0.05, 0.05)};
    }
    OracleParams oracle = opt.oracle;
    oracle.rho = uniform(950.0, 1050.0);

    Vec3 omega{};
    std::array<double, 4> quat{1.0, 0.0, 0.0, 0.0};
    std::vector<TowingCondition> conds(length);
    for (std::size_t j = 0; j < length; ++j) {
      const double time = opt.dt * static_cast<double>(j + 1);
      double* row = t.x.data() + (j + 1) * n;
      TowingCondition& c = conds[j];
      for (std::size_t leg = 0; leg < 4; ++leg) {
        for (std::size_t q = 0; q < 3; ++q) {
          const double phase = 2 * pi * freq * time + leg_phase[leg] + static_cast<double>(q) * pi / 4;
          row[leg * 3 + q] = offset[q] + amp[q] * std::sin(phase);
          row[12 + leg * 3 + q] = amp[q] * 2 * pi * freq * std::cos(phase);
        }
        c.q2[leg] = row[leg * 3 + 1];
        c.q3[leg] = row[leg * 3 + 2];
      }
      for (auto& w : omega) w = 0.98 * w + 0.02 * normal(rng);
      // q ← q ⊗ exp(ω·dt/2)
      const double wn = norm(omega);
      const double half = 0.5 * wn * opt.dt;
      const double s = wn > 0.0 ? std::sin(half) / wn : 0.5 * opt.dt;
      const std::array<double, 4> dq{std::cos(half), s * omega[0], s * omega[1], s * omega[2]};
      const std::array<double, 4> q0 = quat;
      quat = {q0[0] * dq[0] - q0[1] * dq[1] - q0[2] * dq[2] - q0[3] * dq[3],
              q0[0] * dq[1] + q0[1] * dq[0] + q0[2] * dq[3] - q0[3] * dq[2],
              q0[0] * dq[2] - q0[1] * dq[3] + q0[2] * dq[0] + q0[3] * dq[1],
              q0[0] * dq[3] + q0[1] * dq[2] - q0[2] * dq[1] + q0[3] * dq[0]};
      const double qn = std::sqrt(quat[0] * quat[0] + quat[1] * quat[1] + quat[2] * quat[2] + quat[3] * quat[3]);
      for (auto& v : quat) v /= qn;
      c.v = seg_v[seg[j]];
      c.omega = omega;
      for (int i = 0; i < 4; ++i) row[24 + i] = quat[i];
      for (int i = 0; i < 3; ++i) row[28 + i] = omega[i];
      for (int i = 0; i < 3; ++i) row[31 + i] = c.v[i];
      row[34] = oracle.rho;
      t.cond_id[j + 1] = static_cast<std::int64_t>(seg[j]);
    }
    std::copy(t.x.begin() + n, t.x.begin() + 2 * n, t.x.begin());
    t.cond_id[0] = t.cond_id[1];
    const Wrench w0 = steady_wrench(conds.front(), oracle);
    const auto w = simulate_measured_wrench(conds, opt.dt, oracle, w0);
    std::copy(w0.begin(), w0.end(), t.forces.begin());
    for (std::size_t i = 0; i < length; ++i)
      std::copy(w[i].begin(), w[i].end(), t.forces.begin() + static_cast<std::ptrdiff_t>((i + 1) * 6));
    trajs[k] = std::move(t);
  });

  Dataset d;
  d.manifest = base_manifest(Task::k2, n, 6, length, count, opt);
  d.manifest.noise_fraction = opt.noise_fraction;
  d.manifest.noise_sigma = add_noise(trajs, opt.noise_fraction, opt.seed);
  d.trajectories = std::move(trajs);
  return d;
}

Dataset generate(Task task, const GenOptions& opt) { return task == Task::k2 ? gen_task2(opt) : gen_task1(task, opt); }

SplitAssignment split_dataset(const Dataset& data, const SplitRatios& r, std::uint64_t seed) {
  if (!(r.train > 0.0 && r.val > 0.0 && r.test > 0.0) || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be positive and sum to 1");
  }
  const std::size_t total = data.trajectories.size();
  const auto n_test = static_cast<std::size_t>(std::floor(r.test * static_cast<double>(total)));
  const auto n_val = static_cast<std::size_t>(std::floor(r.val * static_cast<double>(total)));
  if (total < 3 || n_test == 0 || n_val == 0) {
    throw std::invalid_argument("cannot split " + std::to_string(total) + " trajectories into train/val/test");
  }

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (const auto& t : data.trajectories) groups[t.group].push_back(t.id);
  std::mt19937_64 rng(derive_seed(seed, 0, 2));
  for (auto& [g, ids] : groups) std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::size_t> order;
  for (std::size_t round = 0; order.size() < total; ++round)
    for (auto& [g, ids] : groups)
      if (round < ids.size()) order.push_back(ids[round]);

  SplitAssignment s;
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
               order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

// ---- files ----

namespace {

std::string file_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "traj_%05zu.csv", id);
  return buf;
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string csv_header(std::size_t n, std::size_t f) {
  std::string h = "t";
  for (std::size_t i = 0; i < n; ++i) h += ",x_" + std::to_string(i);
  for (std::size_t i = 0; i < f; ++i) h += ",F_" + std::to_string(i);
  return h + ",cond_id";
}

}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::ios_base::failure("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m = data.manifest;
  m.num_trajectories = data.trajectories.size();
  m.files.clear();
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& t : data.trajectories) {
    std::string csv = csv_header(t.n, t.f) + "\n";
    for (std::size_t i = 0; i <= t.length; ++i) {
      csv += format_g17(t.t0 + static_cast<double>(i) * t.dt);
      for (std::size_t k = 0; k < t.n; ++k) csv += "," + format_g17(t.x[i * t.n + k]);
      for (std::size_t k = 0; k < t.f; ++k) csv += "," + format_g17(t.forces[i * t.f + k]);
      csv += "," + std::to_string(t.cond_id[i]) + "\n";
    }
    m.files.push_back(file_name(t.id));
    groups.push_back(t.group);
    write_file_atomic(dir / m.files.back(), csv);
  }
  nlohmann::json j = m;
  j["ids"] = [&] {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& t : data.trajectories) ids.push_back(t.id);
    return ids;
  }();
  j["groups"] = groups;
  write_file_atomic(dir / "split.json",
             nlohmann::json{{"train", m.split.train}, {"val", m.split.val}, {"test", m.split.test}}.dump(2) + "\n");
  write_file_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::ios_base::failure("cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  Dataset d;
  d.manifest = j.get<DatasetManifest>();
  const auto& m = d.manifest;
  if (m.files.size() != m.num_trajectories) {
    throw std::runtime_error("manifest lists " + std::to_string(m.files.size()) + " files but num_trajectories is " +
                             std::to_string(m.num_trajectories));
  }
  const auto ids = j.value("ids", all_indices(m.files.size()));
  const auto groups = j.value("groups", std::vector<std::size_t>(m.files.size(), 0));
  if (ids.size() != m.files.size() || groups.size() != m.files.size()) {
    throw std::runtime_error("manifest ids/groups do not match its file list");
  }
  const std::string header = csv_header(m.n, m.f);
  for (std::size_t k = 0; k < m.files.size(); ++k) {
    const auto path = dir / m.files[k];
    std::ifstream csv(path);
    if (!csv) throw std::ios_base::failure("cannot open " + path.string());
    std::string line;
    if (!std::getline(csv, line) || line != header) throw std::runtime_error(path.string() + ": unexpected header");
    Trajectory t = make_trajectory(ids[k], m.n, m.f, m.L, m.dt);
    t.group = groups[k];
    std::size_t row = 0;
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      const std::string where = path.string() + ":" + std::to_string(row + 2);
      if (row > m.L) throw std::runtime_error(where + ": more than L+1 rows");
      const auto cells = split_csv(line);
      if (cells.size() != m.n + m.f + 2) throw std::runtime_error(where + ": wrong column count");
      const double time = parse_double(cells[0], where);
      if (row == 0) t.t0 = time;
      for (std::size_t i = 0; i < m.n; ++i) t.x[row * m.n + i] = parse_double(cells[1 + i], where);
      for (std::size_t i = 0; i < m.f; ++i) t.forces[row * m.f + i] = parse_double(cells[1 + m.n + i], where);
      t.cond_id[row] = static_cast<std::int64_t>(parse_double(cells.back(), where));
      ++row;
    }
    if (row != m.L + 1) {
      throw std::runtime_error(path.string() + ": expected " + std::to_string(m.L + 1) + " rows, found " +
                               std::to_string(row));
    }
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

}  // namespace hode
