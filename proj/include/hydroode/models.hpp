#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydroode/layers.hpp"
#include "hydroode/odeint.hpp"
#include "hydroode/tensor.hpp"
#include "json.hpp"

namespace hode {

enum class EncoderKind { kAttention, kMlp, kLstm };

/// Accepts "attention", "mlp", "lstm" and the model names "attention-ode", "mlp-ode".
EncoderKind parse_encoder(const std::string& name);
std::string to_string(EncoderKind e);
/// Display name used in reports: Attention-ODE, MLP-ODE, LSTM.
std::string model_name(EncoderKind e);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::kAttention;
  std::size_t n_in = 4;
  std::size_t f_out = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t latent = 64;
  std::vector<std::size_t> kernel_hidden{64, 64, 64};
  SolverKind solver = SolverKind::kRk4;
  double dt = 0.02;
  std::size_t substeps = 1;
  bool time_input = false;
  bool positional_encoding = false;
  bool layer_norm = false;
  bool causal = false;
  Activation encoder_activation = Activation::kTanh;
  Activation kernel_activation = Activation::kTanh;
  std::size_t lstm_hidden = 64;
  std::size_t lstm_layers = 2;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument / DimensionError on inconsistent settings.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Fixed affine maps around the network, fitted from training data. They are stored
/// in checkpoints but are not trained.
struct Normalization {
  Tensor x_mean;      // [n_in]
  Tensor x_std;       // [n_in]
  Tensor force_mean;  // [f_out]
  Tensor force_scale; // [f_out], kernel sees (F - force_mean) / force_scale
  Tensor rate_scale;  // [f_out], kernel output is multiplied by this

  static Normalization identity(std::size_t n_in, std::size_t f_out);
};

struct ForecastModel {
  ModelConfig config;
  ParamRegistry params;
  Normalization norm;

  // attention encoder
  LinearLayer embed;
  MultiHeadSelfAttention attn;
  MLPBlock head;
  // mlp encoder
  MLPBlock mlp_encoder;
  // ODE variants
  MLPBlock kernel;
  // baseline
  LSTMStack lstm;
  LinearLayer out_proj;

  bool is_ode() const { return config.encoder != EncoderKind::kLstm; }
};

/// Deterministic in config.seed. The last kernel layer starts at zero, so a fresh ODE
/// model predicts F(t) = F0.
ForecastModel build_model(const ModelConfig& config);

/// X: [N, n_in] or [B, N, n_in] -> latent per step [.., N, latent]. ODE models only.
Tensor encode_conditions(const ForecastModel& model, const Tensor& x);

/// The ODE vector field dF/dt = rate_scale ∘ MLP((F − force_mean) / force_scale, h_t [, t]).
/// Controls are latent sequences [N, latent] or time-major batches [N, B, latent].
class ModelKernel : public Kernel {
 public:
  explicit ModelKernel(const ForecastModel& model) : model_(&model) {}
  VectorField bind(const Tensor& controls) const override;
  std::vector<Tensor> parameters() const override;

 private:
  const ForecastModel* model_;
};

/// X: [N, n_in], F0: [f_out] -> [N, f_out]; or batched [B, N, n_in], [B, f_out] -> [B, N, f_out].
/// Row i is the force at t0 + (i+1)·dt, driven by condition rows 0..i.
Tensor predict_forces(const ForecastModel& model, const Tensor& x, const Tensor& f0, const TimeGrid& grid);

/// LSTM baseline with F0 appended to every input row; outputs force_mean + force_scale ∘ proj(h).
/// Same shapes as predict_forces.
Tensor predict_forces_lstm(const ForecastModel& model, const Tensor& x, const Tensor& f0);

/// Dispatches on the encoder kind; the grid is built from config.dt.
Tensor predict(const ForecastModel& model, const Tensor& x, const Tensor& f0, double t0 = 0.0);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const ForecastModel& model, const std::filesystem::path& path);
/// Throws CheckpointError on bad magic, version, checksum, truncation, or missing or
/// misshapen tensors; nothing is returned in those cases.
ForecastModel checkpoint_load(const std::filesystem::path& path);

}  // namespace hode
