#include "hydroode/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "hydroode/ops.hpp"

namespace hode {

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Tensor activate(const Tensor& x, Activation a) { return a == Activation::kTanh ? tanh(x) : relu(x); }

const Tensor& ParamRegistry::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  if (!tensor.requires_grad() || !tensor.is_leaf()) {
    throw std::invalid_argument("parameter '" + name + "' must be a leaf that requires grad");
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
  return entries_.back().second;
}

const Tensor& ParamRegistry::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

std::vector<Tensor> ParamRegistry::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

std::size_t count_params(const ParamRegistry& registry) {
  std::size_t n = 0;
  for (const auto& [name, t] : registry.entries()) n += t.size();
  return n;
}

Tensor Initializer::xavier_uniform(std::size_t fan_in, std::size_t fan_out) {
  if (fan_in == 0 || fan_out == 0) {
    throw DimensionError("layer dimensions must be positive, got " + std::to_string(fan_in) + " -> " +
                         std::to_string(fan_out));
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) {
    // uniform_real_distribution may return the upper bound through rounding
    do {
      v = dist(rng_);
    } while (std::abs(v) >= bound);
  }
  return Tensor({fan_in, fan_out}, std::move(w), true);
}

ParamRegistry init_params(const std::vector<LinearSpec>& layers, std::uint64_t seed) {
  ParamRegistry registry;
  Initializer init(seed);
  for (const auto& spec : layers) LinearLayer::create(registry, spec.name, spec.in, spec.out, init);
  return registry;
}

LinearLayer LinearLayer::create(ParamRegistry& registry, const std::string& name, std::size_t in, std::size_t out,
                                Initializer& init) {
  LinearLayer layer;
  layer.weight = registry.add(name + ".weight", init.xavier_uniform(in, out));
  layer.bias = registry.add(name + ".bias", Tensor::zeros({out}, true));
  return layer;
}

Tensor LinearLayer::forward(const Tensor& x) const {
  if (x.rank() == 0 || x.dim(x.rank() - 1) != in_dim()) {
    throw DimensionError("linear layer expects last dimension " + std::to_string(in_dim()) + ", got shape " +
                         shape_string(x.shape()));
  }
  if (x.rank() == 1) return reshape(forward(reshape(x, {1, in_dim()})), {out_dim()});
  const Shape lead(x.shape().begin(), x.shape().end() - 1);
  return add(matmul(x, weight), tile_leading(bias, lead));
}

MLPBlock MLPBlock::create(ParamRegistry& registry, const std::string& name, const std::vector<std::size_t>& dims,
                          Activation activation, Initializer& init) {
  if (dims.size() < 2) throw DimensionError("an MLP needs at least an input and an output width");
  MLPBlock block;
  block.activation = activation;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    block.layers.push_back(
        LinearLayer::create(registry, name + ".layers." + std::to_string(i), dims[i], dims[i + 1], init));
  }
  return block;
}

Tensor mlp_forward(const Tensor& x, const MLPBlock& block) {
  Tensor h = x;
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    h = block.layers[i].forward(h);
    if (i + 1 < block.layers.size()) h = activate(h, block.activation);
  }
  return h;
}

MultiHeadSelfAttention MultiHeadSelfAttention::create(ParamRegistry& registry, const std::string& name,
                                                      std::size_t d_model, std::size_t heads, Initializer& init) {
  if (heads == 0 || d_model == 0 || d_model % heads != 0) {
    throw DimensionError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) +
                         " heads");
  }
  MultiHeadSelfAttention attn;
  attn.d_model = d_model;
  attn.heads = heads;
  attn.wq = LinearLayer::create(registry, name + ".wq", d_model, d_model, init);
  attn.wk = LinearLayer::create(registry, name + ".wk", d_model, d_model, init);
  attn.wv = LinearLayer::create(registry, name + ".wv", d_model, d_model, init);
  attn.wo = LinearLayer::create(registry, name + ".wo", d_model, d_model, init);
  return attn;
}

namespace {

void check_attention_input(const Tensor& x, const MultiHeadSelfAttention& attn) {
  if ((x.rank() != 2 && x.rank() != 3) || x.dim(x.rank() - 1) != attn.d_model) {
    throw DimensionError("attention expects [N, " + std::to_string(attn.d_model) + "] or [B, N, " +
                         std::to_string(attn.d_model) + "], got " + shape_string(x.shape()));
  }
}

// Additive mask that removes keys after the query position.
Tensor causal_mask(const Shape& score_shape) {
  const std::size_t n = score_shape.back();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e300;
  Tensor mask({n, n}, std::move(m));
  if (score_shape.size() == 2) return mask;
  return tile_leading(mask, Shape(score_shape.begin(), score_shape.end() - 2));
}

// Per-head softmax(QKᵀ/√d_head) and the projected values, sharing one pass.
struct HeadOutputs {
  std::vector<Tensor> weights;
  std::vector<Tensor> values;
};

HeadOutputs attend(const Tensor& x, const MultiHeadSelfAttention& attn, bool causal) {
  check_attention_input(x, attn);
  const std::size_t last = x.rank() - 1;
  const std::size_t dh = attn.head_dim();
  const Tensor q = attn.wq.forward(x);
  const Tensor k = attn.wk.forward(x);
  const Tensor v = attn.wv.forward(x);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  HeadOutputs out;
  for (std::size_t h = 0; h < attn.heads; ++h) {
    const Tensor qh = slice(q, last, h * dh, dh);
    const Tensor kh = slice(k, last, h * dh, dh);
    const Tensor vh = slice(v, last, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose_last2(kh)), inv_sqrt);
    if (causal) scores = add(scores, causal_mask(scores.shape()));
    Tensor w = softmax_lastdim(scores);
    out.values.push_back(matmul(w, vh));
    out.weights.push_back(std::move(w));
  }
  return out;
}

}  // namespace

Tensor mhsa_forward(const Tensor& x, const MultiHeadSelfAttention& attn, bool causal) {
  HeadOutputs heads = attend(x, attn, causal);
  const Tensor merged = heads.values.size() == 1 ? heads.values.front() : concat(heads.values, x.rank() - 1);
  return attn.wo.forward(merged);
}

Tensor mhsa_weights(const Tensor& x, const MultiHeadSelfAttention& attn, bool causal) {
  HeadOutputs heads = attend(x, attn, causal);
  Tensor w = stack(heads.weights);  // [heads, (B,) N, N]
  return x.rank() == 3 ? swap_axes(w, 0, 1) : w;
}

LSTMStack LSTMStack::create(ParamRegistry& registry, const std::string& name, std::size_t input_size,
                            std::size_t hidden_size, std::size_t num_layers, Initializer& init) {
  if (num_layers == 0 || hidden_size == 0 || input_size == 0) {
    throw DimensionError("LSTM sizes must be positive");
  }
  LSTMStack stack;
  stack.input_size = input_size;
  stack.hidden_size = hidden_size;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = l == 0 ? input_size : hidden_size;
    LinearLayer gate = LinearLayer::create(registry, name + ".layers." + std::to_string(l), in + hidden_size,
                                           4 * hidden_size, init);
    auto b = gate.bias.mutable_values();
    for (std::size_t j = hidden_size; j < 2 * hidden_size; ++j) b[j] = 1.0;
    stack.gates.push_back(std::move(gate));
  }
  return stack;
}

Tensor lstm_forward(const Tensor& x, const LSTMStack& stack) {
  if ((x.rank() != 2 && x.rank() != 3) || x.dim(x.rank() - 1) != stack.input_size) {
    throw DimensionError("LSTM expects [N, " + std::to_string(stack.input_size) + "] or [B, N, " +
                         std::to_string(stack.input_size) + "], got " + shape_string(x.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::size_t hidden = stack.hidden_size;
  // Time-major: [N, (B,) features]
  Tensor seq = batched ? swap_axes(x, 0, 1) : x;
  const std::size_t steps = seq.dim(0);
  const Shape state_shape = batched ? Shape{seq.dim(1), hidden} : Shape{1, hidden};

  for (const LinearLayer& gate : stack.gates) {
    const std::size_t in = gate.in_dim() - hidden;
    // Input contribution for all steps at once; the recurrent part is per step.
    const Tensor w_in = slice(gate.weight, 0, 0, in);
    const Tensor w_rec = slice(gate.weight, 0, in, hidden);
    const Tensor seq2d = batched ? seq : reshape(seq, {steps, 1, in});
    const Tensor x_proj =
        add(matmul(seq2d, w_in), tile_leading(gate.bias, Shape(seq2d.shape().begin(), seq2d.shape().end() - 1)));

    Tensor h = Tensor::zeros(state_shape);
    Tensor c = Tensor::zeros(state_shape);
    std::vector<Tensor> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const Tensor xt = reshape(slice(x_proj, 0, t, 1), {state_shape[0], 4 * hidden});
      const Tensor gates = add(xt, matmul(h, w_rec));
      const Tensor i = sigmoid(slice(gates, 1, 0, hidden));
      const Tensor f = sigmoid(slice(gates, 1, hidden, hidden));
      const Tensor g = tanh(slice(gates, 1, 2 * hidden, hidden));
      const Tensor o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
      c = add(mul(f, c), mul(i, g));
      h = mul(o, tanh(c));
      outputs.push_back(h);
    }
    seq = hode::stack(outputs);
    if (!batched) seq = reshape(seq, {steps, hidden});
  }
  return batched ? swap_axes(seq, 0, 1) : seq;
}

}  // namespace hode
