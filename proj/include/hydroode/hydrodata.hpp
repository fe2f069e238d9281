#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hydroode/tensor.hpp"
#include "json.hpp"

namespace hode {

using Vec3 = std::array<double, 3>;
using Wrench = std::array<double, 6>;  // Fx, Fy, Fz, Tx, Ty, Tz

struct OracleParams {
  double rho = 1000.0;                  // kg/m³
  Vec3 cd{1.1, 1.3, 0.9};               // drag coefficient per body axis
  Vec3 body_area{0.10, 0.25, 0.30};     // m² per axis
  Vec3 leg_area{0.01, 0.008, 0.006};    // a0, a1, a2 in m²
  std::array<Vec3, 4> lever_arms{{{0.3, 0.2, 0.0}, {0.3, -0.2, 0.0}, {-0.3, 0.2, 0.0}, {-0.3, -0.2, 0.0}}};
  double tau_relax = 0.2;               // s
  double joint_limit = 2.6;             // rad

  void validate() const;
};

void to_json(nlohmann::json& j, const OracleParams& p);
void from_json(const nlohmann::json& j, OracleParams& p);

/// Joint angles per leg (second and third joint), body velocity and angular velocity.
struct TowingCondition {
  std::array<double, 4> q2{};
  std::array<double, 4> q3{};
  Vec3 v{};
  Vec3 omega{};

  /// Same joint angles on every leg, no rotation.
  static TowingCondition shared(double q2, double q3, const Vec3& v, const Vec3& omega = {});
};

/// Quasi-static drag of the body and the four legs, with the leg torques about the origin.
Wrench steady_wrench(const TowingCondition& cond, const OracleParams& p);

/// Integrates dW/dt = (W_ss(cond_i) − W)/tau with RK4 (4 substeps per sample), cond_i held
/// over the i-th interval. Returns W at t_1..t_L; W_init defaults to W_ss(conds[0]).
std::vector<Wrench> simulate_measured_wrench(const std::vector<TowingCondition>& conds, double dt,
                                             const OracleParams& p, std::optional<Wrench> w_init = std::nullopt);

/// First-order relaxation of a wrench under piecewise constant targets; the building
/// block of simulate_measured_wrench.
std::vector<Wrench> relax_wrench(const std::vector<Wrench>& targets, double dt, double tau, const Wrench& w_init);

/// One sampled trajectory. Row 0 holds F0 at t0; rows 1..L hold the condition applied over
/// (t_{i-1}, t_i] and the force at t_i. Row 0 repeats the first condition.
struct Trajectory {
  std::size_t id = 0;
  std::size_t group = 0;  // stratum for splitting (Task 1: towing direction)
  double t0 = 0.0;
  double dt = 0.0;
  std::size_t n = 0, f = 0, length = 0;  // length = L
  std::vector<double> x;                 // [(L+1) × n]
  std::vector<double> forces;            // [(L+1) × f]
  std::vector<std::int64_t> cond_id;     // [L+1]

  Tensor inputs() const;   // [L, n]
  Tensor targets() const;  // [L, f]
  Tensor initial() const;  // [f]
};

enum class Task { k1_1, k1_2, k1_3, k2 };
Task parse_task(const std::string& tag);
std::string to_string(Task t);

struct SplitAssignment {
  std::vector<std::size_t> train, val, test;
  bool empty() const { return train.empty() && val.empty() && test.empty(); }
};

struct DatasetManifest {
  std::string task;
  std::size_t n = 0, f = 0, L = 0, num_trajectories = 0;
  double dt = 0.02;
  OracleParams oracle;
  double noise_fraction = 0.0;
  std::vector<double> noise_sigma;  // per output axis, empty when noise_fraction == 0
  SplitAssignment split;
  std::uint64_t seed = 0;
  std::vector<std::string> files;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

struct Dataset {
  DatasetManifest manifest;
  std::vector<Trajectory> trajectories;

  /// Stacked [B, L, n], [B, L, f], [B, f] for the listed trajectory indices (all if empty).
  Tensor inputs(const std::vector<std::size_t>& idx = {}) const;
  Tensor targets(const std::vector<std::size_t>& idx = {}) const;
  Tensor initial(const std::vector<std::size_t>& idx = {}) const;
  /// Trajectories whose ids are listed, in that order.
  Dataset subset(const std::vector<std::size_t>& ids) const;
};

/// The 192 towing conditions: 4 speeds × 3 directions × 4 × 4 joint configurations.
/// index = speed·48 + direction·16 + q2_index·4 + q3_index.
inline constexpr std::size_t kTask1Conditions = 192;
TowingCondition task1_condition(std::size_t index, double joint_limit = 2.6);
std::size_t task1_direction(std::size_t index);
std::array<double, 4> task1_features(const TowingCondition& c);  // q2, q3, vx, vy

struct GenOptions {
  std::size_t trajectories = 0;  // 0: task default (192 for Task 1, 64 for Task 2)
  std::size_t length = 0;        // 0: task default (100 / 50 / 50 / 400)
  double dt = 0.02;
  double noise_fraction = 0.10;  // used by Task 1.3 and Task 2
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  OracleParams oracle;
};

/// Task 1.1 (static), 1.2 (switching) or 1.3 (switching plus noise). The noisy variant
/// shares conditions and clean forces with the switching variant of the same seed.
Dataset gen_task1(Task variant, const GenOptions& opt);
/// 35-dim gait kinematics with 6-dim wrench outputs.
Dataset gen_task2(const GenOptions& opt);
Dataset generate(Task task, const GenOptions& opt);

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

/// Whole-trajectory split: test and val get floor(ratio·N) trajectories, train the rest.
/// Trajectories are shuffled within each group and the groups interleaved, so every group
/// reaches every split when sizes allow.
SplitAssignment split_dataset(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed);

/// Writes manifest.json, split.json and one CSV per trajectory.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
/// Reads a dataset directory; throws std::runtime_error if files and manifest disagree.
Dataset read_dataset(const std::filesystem::path& dir);

/// Per-trajectory random stream from (seed, index, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0);

}  // namespace hode
