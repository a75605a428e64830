#ifndef RAIL_NN_HPP_
#define RAIL_NN_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace rail {

// A batch stores one sample per column: (dim x batch_size).
using Batch = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class OutputActivation : std::uint32_t { kIdentity = 0, kTanh = 1 };

// Dense tanh network. Layer i maps layer_sizes[i] -> layer_sizes[i+1]; every
// layer but the last uses tanh, the last uses `output_activation`.
//
// The same type doubles as the gradient container for a network of the same
// shape.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;  // weights[i]: sizes[i+1] x sizes[i]
  std::vector<Vec> biases;
  OutputActivation output_activation = OutputActivation::kIdentity;
  // Globally unique stamp refreshed whenever parameters are updated through
  // the library. Forward caches record it so a backward pass against a
  // different or since-modified network is rejected. Code that edits weights
  // directly should call touch().
  std::uint64_t generation = 0;

  Mlp() = default;
  // All-zero network of the given shape.
  Mlp(std::vector<int> sizes, OutputActivation out);

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t param_count() const;

  // Zero-valued network with identical shape.
  Mlp zeros_like() const;
  bool same_shape(const Mlp& other) const;
  bool all_finite() const;

  // Flat (row-major weights then bias, layer by layer) parameter access. Used
  // by the finite-difference oracle and the checkpoint format.
  double flat(std::size_t index) const;
  double& flat(std::size_t index);

  void touch();
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
Mlp make_mlp(const std::vector<int>& sizes, OutputActivation out, Rng& rng);

// Convenience: input -> hidden x hidden -> output.
Mlp make_mlp(int input, int hidden, int output, OutputActivation out,
             Rng& rng);

struct ForwardCache {
  std::vector<Batch> pre;   // pre[i]: pre-activation of layer i
  std::vector<Batch> post;  // post[0] = inputs, post[i+1] = act(pre[i])
  std::vector<int> layer_sizes;
  std::uint64_t generation = 0;

  Eigen::Index batch_size() const { return post.empty() ? 0 : post[0].cols(); }
  const Batch& output() const { return post.back(); }
};

struct ForwardResult {
  Batch outputs;
  ForwardCache cache;
};

struct BackwardResult {
  Mlp param_grads;
  Batch input_grads;
};

ForwardResult mlp_forward(const Mlp& params, const Batch& inputs);

// Output only; skips keeping a cache.
Batch mlp_predict(const Mlp& params, const Batch& inputs);

// Gradients of sum(outputs .* output_grads) with respect to parameters and
// inputs.
BackwardResult mlp_backward(const Mlp& params, const ForwardCache& cache,
                            const Batch& output_grads);

// Gradient w.r.t. inputs only (no parameter gradients accumulated).
Batch mlp_input_grad(const Mlp& params, const ForwardCache& cache,
                     const Batch& output_grads);

struct AdamState {
  std::uint64_t step_count = 0;
  Mlp first_moment;
  Mlp second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const Mlp& params, double lr);
};

// In-place update. Throws NonFiniteError (leaving params and state untouched)
// when a gradient entry is not finite.
void adam_update(Mlp& params, const Mlp& grads, AdamState& state);

struct AdamStepResult {
  Mlp params;
  AdamState state;
};

AdamStepResult adam_step(const Mlp& params, const Mlp& grads,
                         const AdamState& state);

// target <- (1 - tau) * target + tau * source
void polyak_update(Mlp& target, const Mlp& source, double tau);

// a += scale * b
void axpy(Mlp& a, const Mlp& b, double scale = 1.0);

// Central differences (f(p + h) - f(p - h)) / 2h for every parameter.
// Throws NonFiniteError naming the flat parameter index on a bad evaluation.
Mlp finite_diff_grad(const std::function<double(const Mlp&)>& f,
                     const Mlp& params, double step);

// Binary checkpoint; layout documented in docs/formats.md.
void save_mlp(std::ostream& out, const Mlp& params);
Mlp load_mlp(std::istream& in);
void save_mlp(const std::string& path, const Mlp& params);
Mlp load_mlp(const std::string& path);

}  // namespace rail

#endif  // RAIL_NN_HPP_
