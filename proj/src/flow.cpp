#include "lvat/flow.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lvat {

namespace {

MlpConfig cond_cfg(const FlowConfig& cfg, const FlowLayer& layer) {
  MlpConfig m;
  m.dims.push_back(layer.pass_idx.size());
  for (const std::size_t h : cfg.cond_hidden) m.dims.push_back(h);
  m.dims.push_back(2 * layer.trans_idx.size());
  m.output_activation = Activation::None;
  m.leaky_slope = cfg.leaky_slope;
  return m;
}

// Conditioner output split into the squashed log-scale and the shift.
struct ScaleShift {
  Tensor log_scale;
  Tensor shift;
};

ScaleShift conditioner(const FlowConfig& cfg, const FlowLayer& layer, const ParamSet& params,
                       const Tensor& pass) {
  const Tensor h = mlp_forward(cond_cfg(cfg, layer), params, layer.prefix, pass);
  const std::size_t t = layer.trans_idx.size();
  ScaleShift out;
  out.log_scale = tanh(slice(h, 1, 0, t)) * cfg.scale_cap;
  out.shift = slice(h, 1, t, 2 * t);
  return out;
}

std::vector<std::size_t> inverse_perm(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) inv[perm[j]] = j;
  return inv;
}

void check_input(const FlowModel& m, const Tensor& x, const char* what) {
  if (x.rank() != 2 || x.shape[1] != m.config.input_dim) {
    throw std::invalid_argument(std::string(what) + ": expected [B x " +
                                std::to_string(m.config.input_dim) + "] input, got " +
                                shape_str(x.shape));
  }
}

}  // namespace

void FlowConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("flow: input_dim must be positive");
  if (couplings > 0 && input_dim < 2) {
    throw std::invalid_argument("flow: coupling layers need input_dim >= 2 to split");
  }
}

FlowModel make_flow(const FlowConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  FlowModel m;
  m.config = cfg;

  std::vector<std::size_t> even, odd;
  for (std::size_t j = 0; j < cfg.input_dim; ++j) (j % 2 == 0 ? even : odd).push_back(j);

  std::size_t perms = 0;
  for (std::size_t c = 0; c < cfg.couplings; ++c) {
    FlowLayer layer;
    layer.kind = FlowLayer::Kind::Coupling;
    layer.pass_idx = (c % 2 == 0) ? even : odd;
    layer.trans_idx = (c % 2 == 0) ? odd : even;
    layer.prefix = "flow/c" + std::to_string(c) + "/";
    m.layers.push_back(layer);

    // Shuffle the columns after every second coupling, but not at the tail
    // where it would only relabel the output.
    if (c % 2 == 1 && c + 1 < cfg.couplings) {
      FlowLayer shuffle;
      shuffle.kind = FlowLayer::Kind::Permutation;
      shuffle.perm.resize(cfg.input_dim);
      std::iota(shuffle.perm.begin(), shuffle.perm.end(), std::size_t{0});
      SplitMix64 rng(derive_seed(seed, "perm" + std::to_string(perms++)));
      rng.shuffle(shuffle.perm);
      m.layers.push_back(shuffle);
    }
  }

  for (const FlowLayer& layer : m.layers) {
    if (layer.kind != FlowLayer::Kind::Coupling) continue;
    const MlpConfig cond = cond_cfg(cfg, layer);
    init_mlp_params_into(cond, layer.prefix, derive_seed(seed, layer.prefix), m.params);
    // Zeroing the last conditioner layer makes the coupling start as the
    // identity map, which keeps early training well conditioned.
    const std::string last = layer.prefix + "layer" + std::to_string(cond.layer_count() - 1);
    for (double& v : m.params.at(last + "/W").values) v = 0.0;
    for (double& v : m.params.at(last + "/b").values) v = 0.0;
  }
  return m;
}

FlowModel make_identity_flow(std::size_t input_dim) {
  FlowModel m;
  m.config.input_dim = input_dim;
  m.config.couplings = 0;
  m.config.cond_hidden.clear();
  m.config.validate();
  return m;
}

FlowForward flow_forward(const FlowModel& m, const ParamSet& params, const Tensor& x) {
  check_input(m, x, "flow_forward");
  FlowForward out;
  out.z = x;
  if (m.layers.empty()) {
    out.log_det = Tensor::zeros({x.shape[0]});
    return out;
  }
  const std::size_t d = m.config.input_dim;
  bool have_det = false;
  for (const FlowLayer& layer : m.layers) {
    if (layer.kind == FlowLayer::Kind::Permutation) {
      out.z = gather_cols(out.z, layer.perm);
      continue;
    }
    const Tensor pass = gather_cols(out.z, layer.pass_idx);
    const Tensor trans = gather_cols(out.z, layer.trans_idx);
    const ScaleShift ss = conditioner(m.config, layer, params, pass);
    const Tensor scaled = add(mul(trans, exp(ss.log_scale)), ss.shift);
    out.z = add(scatter_cols(pass, layer.pass_idx, d), scatter_cols(scaled, layer.trans_idx, d));
    const Tensor contrib = reduce_sum(ss.log_scale, {1});
    out.log_det = have_det ? add(out.log_det, contrib) : contrib;
    have_det = true;
  }
  if (!have_det) out.log_det = Tensor::zeros({x.shape[0]});
  return out;
}

Tensor flow_inverse(const FlowModel& m, const ParamSet& params, const Tensor& z) {
  check_input(m, z, "flow_inverse");
  Tensor x = z;
  const std::size_t d = m.config.input_dim;
  for (auto it = m.layers.rbegin(); it != m.layers.rend(); ++it) {
    const FlowLayer& layer = *it;
    if (layer.kind == FlowLayer::Kind::Permutation) {
      x = gather_cols(x, inverse_perm(layer.perm));
      continue;
    }
    const Tensor pass = gather_cols(x, layer.pass_idx);
    const Tensor trans = gather_cols(x, layer.trans_idx);
    const ScaleShift ss = conditioner(m.config, layer, params, pass);
    const Tensor unscaled = mul(sub(trans, ss.shift), exp(neg(ss.log_scale)));
    x = add(scatter_cols(pass, layer.pass_idx, d), scatter_cols(unscaled, layer.trans_idx, d));
  }
  return x;
}

Tensor flow_log_likelihood(const FlowModel& m, const ParamSet& params, const Tensor& x) {
  const FlowForward fwd = flow_forward(m, params, x);
  const double d = static_cast<double>(m.config.input_dim);
  const Tensor base = reduce_sum(mul(fwd.z, fwd.z), {1}) * -0.5;
  return reduce_mean(add(base, fwd.log_det)) +
         (-0.5 * d * std::log(2.0 * 3.14159265358979323846));
}

Tensor flow_sample(const FlowModel& m, std::size_t n, SplitMix64& rng) {
  Tensor z = Tensor::zeros({n, m.config.input_dim});
  for (double& v : z.values) v = rng.normal();
  return flow_inverse(m, m.params, z);
}

nlohmann::json flow_header(const FlowModel& m) {
  nlohmann::json h;
  h["kind"] = "flow";
  h["input_dim"] = m.config.input_dim;
  h["couplings"] = m.config.couplings;
  h["cond_hidden"] = m.config.cond_hidden;
  h["scale_cap"] = m.config.scale_cap;
  h["leaky_slope"] = m.config.leaky_slope;
  nlohmann::json layers = nlohmann::json::array();
  for (const FlowLayer& layer : m.layers) {
    nlohmann::json l;
    if (layer.kind == FlowLayer::Kind::Coupling) {
      l["kind"] = "coupling";
      l["pass"] = layer.pass_idx;
      l["trans"] = layer.trans_idx;
      l["prefix"] = layer.prefix;
    } else {
      l["kind"] = "permutation";
      l["perm"] = layer.perm;
    }
    layers.push_back(l);
  }
  h["layers"] = layers;
  return h;
}

FlowModel flow_model_from_header(const nlohmann::json& header) {
  if (header.value("kind", std::string()) != "flow") {
    throw std::runtime_error("checkpoint header is not a flow");
  }
  FlowModel m;
  m.config.input_dim = header.at("input_dim").get<std::size_t>();
  m.config.couplings = header.at("couplings").get<std::size_t>();
  m.config.cond_hidden = header.at("cond_hidden").get<std::vector<std::size_t>>();
  m.config.scale_cap = header.at("scale_cap").get<double>();
  m.config.leaky_slope = header.at("leaky_slope").get<double>();
  m.config.validate();
  for (const auto& l : header.at("layers")) {
    FlowLayer layer;
    const std::string kind = l.at("kind").get<std::string>();
    if (kind == "coupling") {
      layer.kind = FlowLayer::Kind::Coupling;
      layer.pass_idx = l.at("pass").get<std::vector<std::size_t>>();
      layer.trans_idx = l.at("trans").get<std::vector<std::size_t>>();
      layer.prefix = l.at("prefix").get<std::string>();
    } else if (kind == "permutation") {
      layer.kind = FlowLayer::Kind::Permutation;
      layer.perm = l.at("perm").get<std::vector<std::size_t>>();
    } else {
      throw std::runtime_error("flow checkpoint has unknown layer kind '" + kind + "'");
    }
    m.layers.push_back(layer);
  }
  return m;
}

}  // namespace lvat
