#include "rail/nn.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "rail/errors.hpp"

namespace rail {

namespace {

std::atomic<std::uint64_t> g_generation{1};

std::uint64_t next_generation() { return g_generation.fetch_add(1); }

void apply_activation(Batch& z, bool tanh_layer) {
  if (tanh_layer) z = z.array().tanh().matrix();
}

bool is_tanh_layer(const Mlp& m, std::size_t layer) {
  return layer + 1 < m.num_layers() ||
         m.output_activation == OutputActivation::kTanh;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, OutputActivation out)
    : layer_sizes(std::move(sizes)), output_activation(out) {
  if (layer_sizes.size() < 2) {
    throw ShapeError("mlp needs at least an input and an output size");
  }
  for (int s : layer_sizes) {
    if (s <= 0) throw ShapeError("mlp layer sizes must be positive");
  }
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
    weights.emplace_back(Eigen::MatrixXd::Zero(layer_sizes[i + 1], layer_sizes[i]));
    biases.emplace_back(Vec::Zero(layer_sizes[i + 1]));
  }
  touch();
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    n += weights[i].size() + biases[i].size();
  }
  return n;
}

Mlp Mlp::zeros_like() const { return Mlp(layer_sizes, output_activation); }

bool Mlp::same_shape(const Mlp& other) const {
  return layer_sizes == other.layer_sizes;
}

bool Mlp::all_finite() const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!weights[i].allFinite() || !biases[i].allFinite()) return false;
  }
  return true;
}

double Mlp::flat(std::size_t index) const {
  return const_cast<Mlp*>(this)->flat(index);
}

double& Mlp::flat(std::size_t index) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto w = static_cast<std::size_t>(weights[i].size());
    if (index < w) {
      const auto cols = static_cast<std::size_t>(weights[i].cols());
      return weights[i](index / cols, index % cols);
    }
    index -= w;
    const auto b = static_cast<std::size_t>(biases[i].size());
    if (index < b) return biases[i](index);
    index -= b;
  }
  throw ShapeError("flat parameter index out of range");
}

void Mlp::touch() { generation = next_generation(); }

Mlp make_mlp(const std::vector<int>& sizes, OutputActivation out, Rng& rng) {
  Mlp m(sizes, out);
  for (std::size_t i = 0; i < m.num_layers(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[i]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto& w = m.weights[i];
    // Row-major draw order so the init is independent of Eigen's storage.
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
  }
  m.touch();
  return m;
}

Mlp make_mlp(int input, int hidden, int output, OutputActivation out,
             Rng& rng) {
  return make_mlp({input, hidden, hidden, output}, out, rng);
}

ForwardResult mlp_forward(const Mlp& params, const Batch& inputs) {
  if (inputs.cols() == 0) throw ShapeError("mlp_forward: empty batch");
  if (inputs.rows() != params.input_dim()) {
    std::ostringstream msg;
    msg << "mlp_forward: layer 0 expects input dim " << params.input_dim()
        << ", got " << inputs.rows();
    throw ShapeError(msg.str());
  }
  ForwardResult r;
  auto& c = r.cache;
  c.layer_sizes = params.layer_sizes;
  c.generation = params.generation;
  c.pre.reserve(params.num_layers());
  c.post.reserve(params.num_layers() + 1);
  c.post.push_back(inputs);
  for (std::size_t i = 0; i < params.num_layers(); ++i) {
    Batch z = params.weights[i] * c.post.back();
    z.colwise() += params.biases[i];
    c.pre.push_back(z);
    apply_activation(z, is_tanh_layer(params, i));
    c.post.push_back(std::move(z));
  }
  r.outputs = c.post.back();
  return r;
}

Batch mlp_predict(const Mlp& params, const Batch& inputs) {
  if (inputs.rows() != params.input_dim()) {
    std::ostringstream msg;
    msg << "mlp_predict: layer 0 expects input dim " << params.input_dim()
        << ", got " << inputs.rows();
    throw ShapeError(msg.str());
  }
  Batch x = inputs;
  for (std::size_t i = 0; i < params.num_layers(); ++i) {
    Batch z = params.weights[i] * x;
    z.colwise() += params.biases[i];
    apply_activation(z, is_tanh_layer(params, i));
    x = std::move(z);
  }
  return x;
}

namespace {

void check_cache(const Mlp& params, const ForwardCache& cache,
                 const Batch& output_grads, const char* who) {
  if (cache.layer_sizes != params.layer_sizes ||
      cache.pre.size() != params.num_layers()) {
    throw ContractError(std::string(who) + ": cache built for another network");
  }
  if (cache.generation != params.generation) {
    throw ContractError(std::string(who) +
                        ": stale cache (parameters changed since forward)");
  }
  if (output_grads.rows() != params.output_dim() ||
      output_grads.cols() != cache.batch_size()) {
    throw ShapeError(std::string(who) + ": output_grads shape mismatch");
  }
}

// delta = g .* act'(z) using the cached activation.
Batch activation_grad(const Mlp& params, const ForwardCache& cache,
                      std::size_t layer, const Batch& g) {
  if (!is_tanh_layer(params, layer)) return g;
  const auto& a = cache.post[layer + 1];
  return (g.array() * (1.0 - a.array().square())).matrix();
}

}  // namespace

BackwardResult mlp_backward(const Mlp& params, const ForwardCache& cache,
                            const Batch& output_grads) {
  check_cache(params, cache, output_grads, "mlp_backward");
  BackwardResult r;
  r.param_grads = params.zeros_like();
  Batch g = output_grads;
  for (std::size_t i = params.num_layers(); i-- > 0;) {
    Batch delta = activation_grad(params, cache, i, g);
    r.param_grads.weights[i].noalias() = delta * cache.post[i].transpose();
    r.param_grads.biases[i] = delta.rowwise().sum();
    g.noalias() = params.weights[i].transpose() * delta;
  }
  r.input_grads = std::move(g);
  return r;
}

Batch mlp_input_grad(const Mlp& params, const ForwardCache& cache,
                     const Batch& output_grads) {
  check_cache(params, cache, output_grads, "mlp_input_grad");
  Batch g = output_grads;
  for (std::size_t i = params.num_layers(); i-- > 0;) {
    Batch delta = activation_grad(params, cache, i, g);
    g.noalias() = params.weights[i].transpose() * delta;
  }
  return g;
}

AdamState::AdamState(const Mlp& params, double lr)
    : first_moment(params.zeros_like()),
      second_moment(params.zeros_like()),
      learning_rate(lr) {
  if (!(lr > 0.0)) throw ContractError("adam: learning_rate must be positive");
}

void adam_update(Mlp& params, const Mlp& grads, AdamState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment)) {
    throw ShapeError("adam_update: gradient/moment shape mismatch");
  }
  if (!(state.learning_rate > 0.0)) {
    throw ContractError("adam_update: learning_rate must be positive");
  }
  if (!grads.all_finite()) {
    throw NonFiniteError("adam_update: non-finite gradient, update rejected");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double lr = state.learning_rate;
  const double eps = state.epsilon;
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = (b2 * v.array() + (1.0 - b2) * g.array().square()).matrix();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < params.num_layers(); ++i) {
    update(params.weights[i], grads.weights[i], state.first_moment.weights[i],
           state.second_moment.weights[i]);
    update(params.biases[i], grads.biases[i], state.first_moment.biases[i],
           state.second_moment.biases[i]);
  }
  params.touch();
}

AdamStepResult adam_step(const Mlp& params, const Mlp& grads,
                         const AdamState& state) {
  AdamStepResult r{params, state};
  adam_update(r.params, grads, r.state);
  return r;
}

void polyak_update(Mlp& target, const Mlp& source, double tau) {
  if (!target.same_shape(source)) throw ShapeError("polyak_update: shape mismatch");
  for (std::size_t i = 0; i < target.num_layers(); ++i) {
    target.weights[i] = (1.0 - tau) * target.weights[i] + tau * source.weights[i];
    target.biases[i] = (1.0 - tau) * target.biases[i] + tau * source.biases[i];
  }
  target.touch();
}

void axpy(Mlp& a, const Mlp& b, double scale) {
  if (!a.same_shape(b)) throw ShapeError("axpy: shape mismatch");
  for (std::size_t i = 0; i < a.num_layers(); ++i) {
    a.weights[i] += scale * b.weights[i];
    a.biases[i] += scale * b.biases[i];
  }
  a.touch();
}

Mlp finite_diff_grad(const std::function<double(const Mlp&)>& f,
                     const Mlp& params, double step) {
  if (!(step > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Mlp probe = params;
  Mlp grad = params.zeros_like();
  const std::size_t n = params.param_count();
  for (std::size_t k = 0; k < n; ++k) {
    const double orig = probe.flat(k);
    probe.flat(k) = orig + step;
    probe.touch();
    const double fp = f(probe);
    probe.flat(k) = orig - step;
    probe.touch();
    const double fm = f(probe);
    probe.flat(k) = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("finite_diff_grad: non-finite evaluation at parameter " +
                           std::to_string(k));
    }
    grad.flat(k) = (fp - fm) / (2.0 * step);
  }
  probe.touch();
  grad.touch();
  return grad;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'A', 'I', 'L', 'M', 'L', 'P', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("mlp checkpoint: truncated header");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw FormatError("mlp checkpoint: truncated payload");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_mlp(std::ostream& out, const Mlp& params) {
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.output_activation));
  put_u32(out, static_cast<std::uint32_t>(params.layer_sizes.size()));
  for (int s : params.layer_sizes) put_u32(out, static_cast<std::uint32_t>(s));
  const std::size_t n = params.param_count();
  for (std::size_t k = 0; k < n; ++k) put_f64(out, params.flat(k));
  if (!out) throw FormatError("mlp checkpoint: write failed");
}

Mlp load_mlp(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) {
    throw FormatError("mlp checkpoint: bad magic");
  }
  const auto version = get_u32(in);
  if (version != kVersion) {
    throw FormatError("mlp checkpoint: unsupported version " + std::to_string(version));
  }
  const auto act = get_u32(in);
  if (act > 1) throw FormatError("mlp checkpoint: unknown output activation");
  const auto count = get_u32(in);
  if (count < 2 || count > 64) throw FormatError("mlp checkpoint: bad layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto s = get_u32(in);
    if (s == 0 || s > (1u << 20)) throw FormatError("mlp checkpoint: bad layer size");
    sizes.push_back(static_cast<int>(s));
  }
  Mlp m(sizes, static_cast<OutputActivation>(act));
  const std::size_t n = m.param_count();
  for (std::size_t k = 0; k < n; ++k) m.flat(k) = get_f64(in);
  if (!m.all_finite()) throw FormatError("mlp checkpoint: non-finite parameter");
  m.touch();
  return m;
}

void save_mlp(const std::string& path, const Mlp& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  save_mlp(out, params);
}

Mlp load_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return load_mlp(in);
}

}  // namespace rail
