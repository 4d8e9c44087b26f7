#include "lvat/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "lvat/rng.hpp"

namespace lvat {

void ParamSet::set(const std::string& name, Tensor value) {
  items_[name] = std::move(value);
}

const Tensor& ParamSet::at(const std::string& name) const {
  const auto it = items_.find(name);
  if (it == items_.end()) {
    throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
  }
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  const auto it = items_.find(name);
  if (it == items_.end()) {
    throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
  }
  return it->second;
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, tensor] : items_) n += tensor.size();
  return n;
}

ParamSet ParamSet::recorded(Tape& tape) const {
  ParamSet out;
  for (const auto& [name, tensor] : items_) out.set(name, tape.input(tensor));
  return out;
}

void init_mlp_params_into(const MlpConfig& cfg, const std::string& prefix, std::uint64_t seed,
                          ParamSet& out) {
  if (cfg.dims.size() < 2) {
    throw std::invalid_argument("init_mlp_params: need at least input and output dims");
  }
  for (const std::size_t d : cfg.dims) {
    if (d == 0) throw std::invalid_argument("init_mlp_params: zero-width layer");
  }
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i + 1 < cfg.dims.size(); ++i) {
    const std::size_t fan_in = cfg.dims[i];
    const std::size_t fan_out = cfg.dims[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (double& v : w.values) v = rng.uniform(-bound, bound);
    const std::string base = prefix + "layer" + std::to_string(i);
    out.set(base + "/W", std::move(w));
    out.set(base + "/b", Tensor::zeros({fan_out}));
  }
}

ParamSet init_mlp_params(const MlpConfig& cfg, const std::string& prefix, std::uint64_t seed) {
  ParamSet out;
  init_mlp_params_into(cfg, prefix, seed, out);
  return out;
}

Tensor apply_activation(const Tensor& x, Activation act, double leaky_slope) {
  switch (act) {
    case Activation::None:
      return x;
    case Activation::Sigmoid:
      return sigmoid(x);
    case Activation::Tanh:
      return tanh(x);
    case Activation::LeakyRelu:
      return leaky_relu(x, leaky_slope);
  }
  throw std::invalid_argument("apply_activation: unknown activation");
}

Tensor mlp_forward(const MlpConfig& cfg, const ParamSet& params, const std::string& prefix,
                   const Tensor& x) {
  if (x.rank() != 2 || x.shape[1] != cfg.input_dim()) {
    throw std::invalid_argument("mlp_forward: input " + shape_str(x.shape) +
                                " does not match expected width " +
                                std::to_string(cfg.input_dim()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < cfg.dims.size(); ++i) {
    const std::string base = prefix + "layer" + std::to_string(i);
    h = add(matmul(h, params.at(base + "/W")), params.at(base + "/b"));
    const bool last = (i + 2 == cfg.dims.size());
    h = last ? apply_activation(h, cfg.output_activation, cfg.leaky_slope)
             : leaky_relu(h, cfg.leaky_slope);
  }
  return h;
}

namespace {

void check_logits(const char* name, const Tensor& logits) {
  if (logits.rank() != 2 || logits.shape[1] < 2) {
    throw std::invalid_argument(std::string(name) + ": expected [B x K] logits with K >= 2, got " +
                                shape_str(logits.shape));
  }
  if (logits.nonfinite || !logits.all_finite()) {
    throw std::invalid_argument(std::string(name) + ": non-finite logits");
  }
}

}  // namespace

Tensor log_softmax(const Tensor& logits) {
  check_logits("log_softmax", logits);
  const Tensor shift = row_max_const(logits);
  Tensor shifted = sub(logits, shift);
  Tensor lse = log(reduce_sum(exp(shifted), {1}, true));
  return sub(shifted, lse);
}

Tensor softmax(const Tensor& logits) {
  check_logits("softmax", logits);
  const Tensor shift = row_max_const(logits);
  Tensor e = exp(sub(logits, shift));
  return div(e, reduce_sum(e, {1}, true));
}

Tensor onehot(const std::vector<int>& labels, std::size_t num_classes) {
  Tensor out = Tensor::zeros({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("onehot: label " + std::to_string(labels[i]) +
                                  " out of range for " + std::to_string(num_classes) +
                                  " classes");
    }
    out.values[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_logits("cross_entropy", logits);
  if (labels.size() != logits.shape[0]) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(logits.shape[0]) + " rows");
  }
  const Tensor mask = onehot(labels, logits.shape[1]);
  Tensor picked = reduce_sum(mul(log_softmax(logits), mask), {1});
  return neg(reduce_mean(picked));
}

Tensor kl_categorical(const Tensor& p_logits, const Tensor& q_logits) {
  check_logits("kl_categorical", p_logits);
  check_logits("kl_categorical", q_logits);
  if (p_logits.shape != q_logits.shape) {
    throw std::invalid_argument("kl_categorical: shape mismatch " + shape_str(p_logits.shape) +
                                " vs " + shape_str(q_logits.shape));
  }
  Tensor p = softmax(p_logits);
  Tensor diff = sub(log_softmax(p_logits), log_softmax(q_logits));
  return reduce_mean(reduce_sum(mul(p, diff), {1}));
}

Tensor gaussian_kl(const Tensor& mu, const Tensor& log_var) {
  if (mu.shape != log_var.shape || mu.rank() != 2) {
    throw std::invalid_argument("gaussian_kl: expected matching [B x d] inputs, got " +
                                shape_str(mu.shape) + " and " + shape_str(log_var.shape));
  }
  if (mu.nonfinite || log_var.nonfinite || !mu.all_finite() || !log_var.all_finite()) {
    throw std::invalid_argument("gaussian_kl: non-finite inputs");
  }
  Tensor per_dim = sub(sub(add(mul(mu, mu), exp(log_var)), Tensor::scalar(1.0)), log_var);
  return mul(Tensor::scalar(0.5), reduce_mean(reduce_sum(per_dim, {1})));
}

}  // namespace lvat
