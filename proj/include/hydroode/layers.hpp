#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hydroode/tensor.hpp"

namespace hode {

enum class Activation { kTanh, kRelu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
Tensor activate(const Tensor& x, Activation a);

/// Named trainable tensors in insertion order.
class ParamRegistry {
 public:
  using Entry = std::pair<std::string, Tensor>;

  /// Registers a parameter. Names must be unique; the tensor must require grad.
  const Tensor& add(std::string name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::size_t count_params(const ParamRegistry& registry);

/// Seeded source of initial parameter values.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Xavier-uniform weights of shape [fan_in, fan_out].
  Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out);

 private:
  std::mt19937_64 rng_;
};

struct LinearSpec {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
};

/// Builds "<name>.weight" (Xavier-uniform) and "<name>.bias" (zero) for every spec,
/// drawing in order from one generator seeded with `seed`.
ParamRegistry init_params(const std::vector<LinearSpec>& layers, std::uint64_t seed);

struct LinearLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static LinearLayer create(ParamRegistry& registry, const std::string& name, std::size_t in, std::size_t out,
                            Initializer& init);
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  /// x: [..., in] -> [..., out]
  Tensor forward(const Tensor& x) const;
};

/// Linear layers with an activation between consecutive layers (none after the last).
struct MLPBlock {
  std::vector<LinearLayer> layers;
  Activation activation = Activation::kTanh;

  /// dims = {in, hidden..., out}; needs at least two entries.
  static MLPBlock create(ParamRegistry& registry, const std::string& name, const std::vector<std::size_t>& dims,
                         Activation activation, Initializer& init);
  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

Tensor mlp_forward(const Tensor& x, const MLPBlock& block);

struct MultiHeadSelfAttention {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  LinearLayer wq, wk, wv, wo;

  static MultiHeadSelfAttention create(ParamRegistry& registry, const std::string& name, std::size_t d_model,
                                       std::size_t heads, Initializer& init);
  std::size_t head_dim() const { return d_model / heads; }
};

/// Self-attention over the sequence axis. X: [N, d_model] or [B, N, d_model].
/// With `causal`, query i only attends to keys 0..i.
Tensor mhsa_forward(const Tensor& x, const MultiHeadSelfAttention& attn, bool causal = false);

/// Attention weights per head: [heads, N, N] (or [B, heads, N, N]); rows sum to one.
Tensor mhsa_weights(const Tensor& x, const MultiHeadSelfAttention& attn, bool causal = false);

/// Stacked LSTM. Gate weights per layer are [input + hidden, 4·hidden] in the order
/// (input, forget, cell, output); forget-gate bias starts at 1.
struct LSTMStack {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::vector<LinearLayer> gates;

  static LSTMStack create(ParamRegistry& registry, const std::string& name, std::size_t input_size,
                          std::size_t hidden_size, std::size_t num_layers, Initializer& init);
};

/// X: [N, input] or [B, N, input] -> top-layer hidden states [.., N, hidden], zero initial state.
Tensor lstm_forward(const Tensor& x, const LSTMStack& stack);

}  // namespace hode
