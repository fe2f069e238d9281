#include "hydroode/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <unordered_map>

#include <zlib.h>

#include "hydroode/ops.hpp"

namespace hode {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

EncoderKind parse_encoder(const std::string& name) {
  if (name == "attention" || name == "attention-ode") return EncoderKind::kAttention;
  if (name == "mlp" || name == "mlp-ode") return EncoderKind::kMlp;
  if (name == "lstm" || name == "lstm-baseline") return EncoderKind::kLstm;
  throw std::invalid_argument("unknown model '" + name + "' (expected attention-ode, mlp-ode or lstm)");
}

std::string to_string(EncoderKind e) {
  switch (e) {
    case EncoderKind::kAttention: return "attention";
    case EncoderKind::kMlp: return "mlp";
    case EncoderKind::kLstm: return "lstm";
  }
  return "?";
}

std::string model_name(EncoderKind e) {
  switch (e) {
    case EncoderKind::kAttention: return "Attention-ODE";
    case EncoderKind::kMlp: return "MLP-ODE";
    case EncoderKind::kLstm: return "LSTM";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (n_in == 0 || f_out == 0) throw DimensionError("n_in and f_out must be positive");
  if (encoder == EncoderKind::kLstm) {
    if (lstm_hidden == 0 || lstm_layers == 0) throw DimensionError("LSTM hidden size and layer count must be positive");
    return;
  }
  if (d_model == 0 || latent == 0) throw DimensionError("d_model and latent must be positive");
  if (encoder == EncoderKind::kAttention && (heads == 0 || d_model % heads != 0)) {
    throw DimensionError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (kernel_hidden.empty()) throw DimensionError("kernel needs at least one hidden layer");
  for (auto w : kernel_hidden)
    if (w == 0) throw DimensionError("kernel widths must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (substeps == 0) throw std::invalid_argument("substeps must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"encoder", to_string(c.encoder)},
                     {"n_in", c.n_in},
                     {"f_out", c.f_out},
                     {"d_model", c.d_model},
                     {"heads", c.heads},
                     {"latent", c.latent},
                     {"kernel_hidden", c.kernel_hidden},
                     {"solver", to_string(c.solver)},
                     {"dt", c.dt},
                     {"substeps", c.substeps},
                     {"time_input", c.time_input},
                     {"positional_encoding", c.positional_encoding},
                     {"layer_norm", c.layer_norm},
                     {"causal", c.causal},
                     {"encoder_activation", to_string(c.encoder_activation)},
                     {"kernel_activation", to_string(c.kernel_activation)},
                     {"lstm_hidden", c.lstm_hidden},
                     {"lstm_layers", c.lstm_layers},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known{"encoder",     "n_in",        "f_out",
                                           "d_model",     "heads",       "latent",
                                           "kernel_hidden", "solver",    "dt",
                                           "substeps",    "time_input",  "positional_encoding",
                                           "layer_norm",  "causal",      "encoder_activation",
                                           "kernel_activation", "lstm_hidden", "lstm_layers",
                                           "seed"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown model config key '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("encoder")) c.encoder = parse_encoder(j.at("encoder").get<std::string>());
  if (j.contains("solver")) c.solver = parse_solver(j.at("solver").get<std::string>());
  if (j.contains("encoder_activation")) c.encoder_activation = parse_activation(j.at("encoder_activation").get<std::string>());
  if (j.contains("kernel_activation")) c.kernel_activation = parse_activation(j.at("kernel_activation").get<std::string>());
  get("n_in", c.n_in);
  get("f_out", c.f_out);
  get("d_model", c.d_model);
  get("heads", c.heads);
  get("latent", c.latent);
  get("kernel_hidden", c.kernel_hidden);
  get("dt", c.dt);
  get("substeps", c.substeps);
  get("time_input", c.time_input);
  get("positional_encoding", c.positional_encoding);
  get("layer_norm", c.layer_norm);
  get("causal", c.causal);
  get("lstm_hidden", c.lstm_hidden);
  get("lstm_layers", c.lstm_layers);
  get("seed", c.seed);
}

Normalization Normalization::identity(std::size_t n_in, std::size_t f_out) {
  return {Tensor::zeros({n_in}), Tensor::full({n_in}, 1.0), Tensor::zeros({f_out}), Tensor::full({f_out}, 1.0),
          Tensor::full({f_out}, 1.0)};
}

ForecastModel build_model(const ModelConfig& config) {
  config.validate();
  ForecastModel m;
  m.config = config;
  m.norm = Normalization::identity(config.n_in, config.f_out);
  Initializer init(config.seed);
  const auto& c = config;
  switch (c.encoder) {
    case EncoderKind::kAttention:
      m.embed = LinearLayer::create(m.params, "encoder.embed", c.n_in, c.d_model, init);
      m.attn = MultiHeadSelfAttention::create(m.params, "encoder.attn", c.d_model, c.heads, init);
      m.head = MLPBlock::create(m.params, "encoder.head", {c.d_model, c.d_model, c.latent}, c.encoder_activation, init);
      break;
    case EncoderKind::kMlp:
      m.mlp_encoder =
          MLPBlock::create(m.params, "encoder.mlp", {c.n_in, c.d_model, c.latent}, c.encoder_activation, init);
      break;
    case EncoderKind::kLstm:
      m.lstm = LSTMStack::create(m.params, "lstm", c.n_in + c.f_out, c.lstm_hidden, c.lstm_layers, init);
      m.out_proj = LinearLayer::create(m.params, "lstm.out", c.lstm_hidden, c.f_out, init);
      return m;
  }
  std::vector<std::size_t> dims{c.f_out + c.latent + (c.time_input ? 1 : 0)};
  dims.insert(dims.end(), c.kernel_hidden.begin(), c.kernel_hidden.end());
  dims.push_back(c.f_out);
  m.kernel = MLPBlock::create(m.params, "kernel", dims, c.kernel_activation, init);
  auto w = m.kernel.layers.back().weight.mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  return m;
}

namespace {

Tensor reciprocal(const Tensor& t) {
  std::vector<double> v = t.data();
  for (auto& x : v) x = 1.0 / x;
  return Tensor(t.shape(), std::move(v));
}

Shape leading(const Tensor& x) { return Shape(x.shape().begin(), x.shape().end() - 1); }

void check_input(const ForecastModel& model, const Tensor& x) {
  if ((x.rank() != 2 && x.rank() != 3) || x.dim(x.rank() - 1) != model.config.n_in) {
    throw DimensionError("conditions must be [N, " + std::to_string(model.config.n_in) + "] or [B, N, " +
                         std::to_string(model.config.n_in) + "], got " + shape_string(x.shape()));
  }
}

Tensor normalize_input(const ForecastModel& model, const Tensor& x) {
  const Shape lead = leading(x);
  return mul(sub(x, tile_leading(model.norm.x_mean, lead)), tile_leading(reciprocal(model.norm.x_std), lead));
}

Tensor positional_encoding(std::size_t n, std::size_t d) {
  std::vector<double> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double arg = static_cast<double>(pos) * freq;
      pe[pos * d + i] = i % 2 == 0 ? std::sin(arg) : std::cos(arg);
    }
  }
  return Tensor({n, d}, std::move(pe));
}

// Checks F0 against the batch layout of x and returns both in batched form.
std::pair<Tensor, Tensor> as_batch(const ForecastModel& model, const Tensor& x, const Tensor& f0) {
  check_input(model, x);
  const std::size_t f = model.config.f_out;
  if (x.rank() == 2) {
    if (f0.shape() != Shape{f}) {
      throw DimensionError("F0 must be [" + std::to_string(f) + "], got " + shape_string(f0.shape()));
    }
    return {reshape(x, {1, x.dim(0), x.dim(1)}), reshape(f0, {1, f})};
  }
  if (f0.shape() != Shape{x.dim(0), f}) {
    throw DimensionError("F0 must be [" + std::to_string(x.dim(0)) + ", " + std::to_string(f) + "], got " +
                         shape_string(f0.shape()));
  }
  return {x, f0};
}

}  // namespace

Tensor encode_conditions(const ForecastModel& model, const Tensor& x) {
  if (!model.is_ode()) throw std::invalid_argument("the LSTM baseline has no condition encoder");
  check_input(model, x);
  const Tensor xn = normalize_input(model, x);
  if (model.config.encoder == EncoderKind::kMlp) return mlp_forward(xn, model.mlp_encoder);

  Tensor e = model.embed.forward(xn);
  if (model.config.positional_encoding) {
    const std::size_t n = x.dim(x.rank() - 2);
    Tensor pe = positional_encoding(n, model.config.d_model);
    if (x.rank() == 3) pe = tile_leading(pe, {x.dim(0)});
    e = add(e, pe);
  }
  Tensor z = add(e, mhsa_forward(e, model.attn, model.config.causal));
  if (model.config.layer_norm) z = layer_norm_lastdim(z);
  return mlp_forward(z, model.head);
}

VectorField ModelKernel::bind(const Tensor& controls) const {
  const ForecastModel& m = *model_;
  const std::size_t f = m.config.f_out;
  const std::size_t latent = m.config.latent;
  if ((controls.rank() != 2 && controls.rank() != 3) || controls.dim(controls.rank() - 1) != latent) {
    throw DimensionError("kernel controls must be [N, " + std::to_string(latent) + "] or [N, B, " +
                         std::to_string(latent) + "], got " + shape_string(controls.shape()));
  }
  const bool batched = controls.rank() == 3;
  const std::size_t batch = batched ? controls.dim(1) : 1;
  const Tensor u = batched ? controls : reshape(controls, {controls.dim(0), 1, latent});

  const LinearLayer& first = m.kernel.layers.front();
  const std::size_t hidden = first.out_dim();
  const Tensor w_state = slice(first.weight, 0, 0, f);
  // Control part of the first layer, once for the whole sequence.
  const Tensor proj =
      add(matmul(u, slice(first.weight, 0, f, latent)), tile_leading(first.bias, {u.dim(0), batch}));
  Tensor w_time;
  if (m.config.time_input) w_time = tile_leading(reshape(slice(first.weight, 0, f + latent, 1), {hidden}), {batch});
  const Tensor mean = tile_leading(m.norm.force_mean, {batch});
  const Tensor inv_scale = tile_leading(reciprocal(m.norm.force_scale), {batch});
  const Tensor rate = tile_leading(m.norm.rate_scale, {batch});
  const MLPBlock mlp = m.kernel;
  const bool time_input = m.config.time_input;

  return [=](const Tensor& state, std::size_t step, double t) {
    const Tensor s = batched ? state : reshape(state, {1, f});
    if (s.shape() != Shape{batch, f}) {
      throw DimensionError("kernel state must be [" + std::to_string(batch) + ", " + std::to_string(f) + "], got " +
                           shape_string(state.shape()));
    }
    Tensor h = add(matmul(mul(sub(s, mean), inv_scale), w_state), reshape(slice(proj, 0, step, 1), {batch, hidden}));
    if (time_input) h = add(h, scale(w_time, t));
    for (std::size_t i = 1; i < mlp.layers.size(); ++i) h = mlp.layers[i].forward(activate(h, mlp.activation));
    const Tensor out = mul(h, rate);
    return batched ? out : reshape(out, {f});
  };
}

std::vector<Tensor> ModelKernel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : model_->kernel.layers) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

Tensor predict_forces(const ForecastModel& model, const Tensor& x, const Tensor& f0, const TimeGrid& grid) {
  if (!model.is_ode()) throw std::invalid_argument("predict_forces needs an ODE model; use predict_forces_lstm");
  const auto [xb, f0b] = as_batch(model, x, f0);
  if (grid.steps != xb.dim(1)) {
    throw DimensionError("time grid has " + std::to_string(grid.steps) + " steps but the condition sequence has " +
                         std::to_string(xb.dim(1)));
  }
  const Tensor controls = swap_axes(encode_conditions(model, xb), 0, 1);  // [N, B, latent]
  const ModelKernel kernel(model);
  const Tensor traj = integrate(model.config.solver, f0b, kernel, grid, controls, model.config.substeps);
  const Tensor out = swap_axes(traj, 0, 1);
  return x.rank() == 2 ? reshape(out, {x.dim(0), model.config.f_out}) : out;
}

Tensor predict_forces_lstm(const ForecastModel& model, const Tensor& x, const Tensor& f0) {
  if (model.is_ode()) throw std::invalid_argument("predict_forces_lstm needs the LSTM baseline");
  const auto [xb, f0b] = as_batch(model, x, f0);
  const std::size_t b = xb.dim(0), n = xb.dim(1);
  const Tensor f0n =
      mul(sub(f0b, tile_leading(model.norm.force_mean, {b})), tile_leading(reciprocal(model.norm.force_scale), {b}));
  const Tensor inputs = concat({normalize_input(model, xb), swap_axes(tile_leading(f0n, {n}), 0, 1)}, 2);
  const Tensor out =
      add(mul(model.out_proj.forward(lstm_forward(inputs, model.lstm)), tile_leading(model.norm.force_scale, {b, n})),
          tile_leading(model.norm.force_mean, {b, n}));
  return x.rank() == 2 ? reshape(out, {n, model.config.f_out}) : out;
}

Tensor predict(const ForecastModel& model, const Tensor& x, const Tensor& f0, double t0) {
  if (!model.is_ode()) return predict_forces_lstm(model, x, f0);
  check_input(model, x);
  return predict_forces(model, x, f0, {t0, model.config.dt, x.dim(x.rank() - 2)});
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'H', 'O', 'D', 'E', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::vector<std::pair<std::string, Tensor>> named_tensors(const ForecastModel& m) {
  std::vector<std::pair<std::string, Tensor>> out(m.params.entries().begin(), m.params.entries().end());
  out.emplace_back("norm.x_mean", m.norm.x_mean);
  out.emplace_back("norm.x_std", m.norm.x_std);
  out.emplace_back("norm.force_mean", m.norm.force_mean);
  out.emplace_back("norm.force_scale", m.norm.force_scale);
  out.emplace_back("norm.rate_scale", m.norm.rate_scale);
  return out;
}

std::uint32_t crc(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

void checkpoint_save(const ForecastModel& model, const std::filesystem::path& path) {
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  const std::string header = nlohmann::json(model.config).dump();
  put<std::uint64_t>(buf, header.size());
  buf += header;
  const auto tensors = named_tensors(model);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(buf, d);
    for (double v : t.values()) put<double>(buf, v);
  }
  put<std::uint32_t>(buf, crc(buf));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::ios_base::failure("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::ios_base::failure("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ForecastModel checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kMagic) + 4 + 8 + 4 + 4) throw CheckpointError("checkpoint is truncated");
  if (std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint file (bad magic)");

  const std::string_view body(data.data(), data.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, data.data() + body.size(), 4);
  Reader r(body);
  r.take(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (crc(body) != stored) throw CheckpointError("checkpoint checksum mismatch");

  ForecastModel model;
  try {
    const auto header_len = r.get<std::uint64_t>();
    model = build_model(nlohmann::json::parse(r.take(header_len)).get<ModelConfig>());
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }

  std::unordered_map<std::string, Tensor> targets;
  for (auto& [name, t] : named_tensors(model)) targets.emplace(name, t);
  std::map<std::string, std::vector<double>> norm_values;
  const auto count = r.get<std::uint32_t>();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name(r.take(r.get<std::uint32_t>()));
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    auto it = targets.find(name);
    if (it == targets.end()) throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
    if (shape != it->second.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                            shape_string(it->second.shape()));
    }
    std::vector<double> values(it->second.size());
    const auto raw = r.take(values.size() * sizeof(double));
    std::memcpy(values.data(), raw.data(), raw.size());
    if (name.starts_with("norm.")) {
      norm_values[name] = std::move(values);
    } else {
      auto dst = it->second.mutable_values();
      std::copy(values.begin(), values.end(), dst.begin());
    }
    seen.insert(name);
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  for (const auto& [name, t] : targets)
    if (!seen.count(name)) throw CheckpointError("checkpoint is missing tensor '" + name + "'");

  auto norm = [&](const char* name, Tensor& dst) { dst = Tensor(dst.shape(), norm_values.at(name)); };
  norm("norm.x_mean", model.norm.x_mean);
  norm("norm.x_std", model.norm.x_std);
  norm("norm.force_mean", model.norm.force_mean);
  norm("norm.force_scale", model.norm.force_scale);
  norm("norm.rate_scale", model.norm.rate_scale);
  return model;
}

}  // namespace hode
