#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lvat/tensor.hpp"

namespace lvat {

// Named parameter collection. Iteration order is the sorted name order, which
// keeps initialization, optimizer sweeps and serialization deterministic.
class ParamSet {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool has(const std::string& name) const { return items_.count(name) != 0; }
  std::size_t count() const { return items_.size(); }
  std::size_t total_elements() const;

  // Copy of this set with every tensor recorded as a leaf on the tape.
  ParamSet recorded(Tape& tape) const;

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

 private:
  std::map<std::string, Tensor> items_;
};

enum class Activation { None, Sigmoid, Tanh, LeakyRelu };

// Fully connected stack. dims = [input, hidden..., output]; hidden layers use
// leaky ReLU, the output layer uses output_activation.
struct MlpConfig {
  std::vector<std::size_t> dims;
  Activation output_activation = Activation::None;
  double leaky_slope = 0.1;

  std::size_t layer_count() const { return dims.empty() ? 0 : dims.size() - 1; }
  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases, named
// "<prefix>layer<i>/W" and "<prefix>layer<i>/b".
ParamSet init_mlp_params(const MlpConfig& cfg, const std::string& prefix, std::uint64_t seed);
void init_mlp_params_into(const MlpConfig& cfg, const std::string& prefix, std::uint64_t seed,
                          ParamSet& out);

// Forward pass; x is [B x dims.front()]. Records on the tape of x or of the
// parameters, whichever is present.
Tensor mlp_forward(const MlpConfig& cfg, const ParamSet& params, const std::string& prefix,
                   const Tensor& x);

Tensor apply_activation(const Tensor& x, Activation act, double leaky_slope);

// Rowwise softmax / log-softmax of [B x K] logits, K >= 2, max-shifted for
// stability. The shift is treated as a constant, which leaves gradients
// unchanged because softmax is shift invariant.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

// Mean cross entropy in nats over the batch; labels index columns of logits.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Mean KL(p || q) in nats over the batch, both arguments given as logits.
// Gradient flows into q_logits only if p_logits is an unrecorded constant,
// which is how callers implement the stopped-gradient target.
Tensor kl_categorical(const Tensor& p_logits, const Tensor& q_logits);

// Mean over the batch of KL(N(mu, diag exp(log_var)) || N(0, I)), summed over
// latent dimensions.
Tensor gaussian_kl(const Tensor& mu, const Tensor& log_var);

// Constant [B x K] one-hot matrix for the given labels.
Tensor onehot(const std::vector<int>& labels, std::size_t num_classes);

}  // namespace lvat
