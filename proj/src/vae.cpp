#include "lvat/vae.hpp"

#include <stdexcept>

namespace lvat {

namespace {

constexpr double kLogVarLo = -10.0;
constexpr double kLogVarHi = 10.0;

MlpConfig trunk_cfg(const VaeConfig& cfg) {
  MlpConfig m;
  m.dims.push_back(cfg.input_dim);
  for (const std::size_t h : cfg.enc_hidden) m.dims.push_back(h);
  // The trunk ends in an activation; the linear heads hang off it.
  m.output_activation = Activation::LeakyRelu;
  m.leaky_slope = cfg.leaky_slope;
  return m;
}

std::size_t trunk_out_dim(const VaeConfig& cfg) {
  return cfg.enc_hidden.empty() ? cfg.input_dim : cfg.enc_hidden.back();
}

MlpConfig head_cfg(const VaeConfig& cfg) {
  MlpConfig m;
  m.dims = {trunk_out_dim(cfg), cfg.latent_dim};
  m.output_activation = Activation::None;
  return m;
}

MlpConfig decoder_cfg(const VaeConfig& cfg) {
  MlpConfig m;
  m.dims.push_back(cfg.latent_dim);
  for (const std::size_t h : cfg.dec_hidden) m.dims.push_back(h);
  m.dims.push_back(cfg.input_dim);
  m.output_activation = Activation::None;
  m.leaky_slope = cfg.leaky_slope;
  return m;
}

Tensor trunk_forward(const VaeConfig& cfg, const ParamSet& params, const Tensor& x) {
  if (cfg.enc_hidden.empty()) return x;
  return mlp_forward(trunk_cfg(cfg), params, "vae/enc/", x);
}

}  // namespace

void VaeConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("vae: input_dim must be positive");
  if (latent_dim == 0 || latent_dim > input_dim) {
    throw std::invalid_argument("vae: latent_dim must lie in [1, input_dim]");
  }
}

VaeModel make_vae(const VaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  VaeModel m;
  m.config = cfg;
  if (!cfg.enc_hidden.empty()) {
    init_mlp_params_into(trunk_cfg(cfg), "vae/enc/", derive_seed(seed, "enc"), m.params);
  }
  init_mlp_params_into(head_cfg(cfg), "vae/mu/", derive_seed(seed, "mu"), m.params);
  init_mlp_params_into(head_cfg(cfg), "vae/logvar/", derive_seed(seed, "logvar"), m.params);
  init_mlp_params_into(decoder_cfg(cfg), "vae/dec/", derive_seed(seed, "dec"), m.params);
  return m;
}

VaeEncoding vae_encode_stats(const VaeConfig& cfg, const ParamSet& params, const Tensor& x) {
  const Tensor h = trunk_forward(cfg, params, x);
  VaeEncoding enc;
  enc.mu = mlp_forward(head_cfg(cfg), params, "vae/mu/", h);
  enc.log_var = clamp(mlp_forward(head_cfg(cfg), params, "vae/logvar/", h), kLogVarLo, kLogVarHi);
  return enc;
}

Tensor vae_encode(const VaeConfig& cfg, const ParamSet& params, const Tensor& x, SplitMix64& rng) {
  const VaeEncoding enc = vae_encode_stats(cfg, params, x);
  Tensor eps = Tensor::zeros(enc.mu.shape);
  for (double& v : eps.values) v = rng.normal();
  return add(enc.mu, mul(exp(enc.log_var * 0.5), eps));
}

Tensor vae_encode_deterministic(const VaeConfig& cfg, const ParamSet& params, const Tensor& x) {
  return vae_encode_stats(cfg, params, x).mu;
}

Tensor vae_decode_logits(const VaeConfig& cfg, const ParamSet& params, const Tensor& z) {
  return mlp_forward(decoder_cfg(cfg), params, "vae/dec/", z);
}

Tensor vae_decode(const VaeConfig& cfg, const ParamSet& params, const Tensor& z) {
  const Tensor logits = vae_decode_logits(cfg, params, z);
  return cfg.recon == ReconLoss::Bernoulli ? sigmoid(logits) : logits;
}

VaeLoss vae_loss(const VaeConfig& cfg, const ParamSet& params, const Tensor& x, SplitMix64& rng) {
  const VaeEncoding enc = vae_encode_stats(cfg, params, x);
  Tensor eps = Tensor::zeros(enc.mu.shape);
  for (double& v : eps.values) v = rng.normal();
  const Tensor z = add(enc.mu, mul(exp(enc.log_var * 0.5), eps));
  const Tensor logits = vae_decode_logits(cfg, params, z);

  VaeLoss out;
  if (cfg.recon == ReconLoss::Bernoulli) {
    // Per-pixel negative log likelihood softplus(l) - x * l; the usual
    // x log s + (1 - x) log(1 - s) rearranged to avoid saturation.
    out.recon = reduce_mean(reduce_sum(sub(softplus(logits), mul(x, logits)), {1}));
  } else {
    const Tensor diff = sub(x, logits);
    out.recon = reduce_mean(reduce_sum(mul(diff, diff), {1})) * 0.5;
  }
  out.kl = gaussian_kl(enc.mu, enc.log_var);
  out.total = add(out.recon, out.kl);
  return out;
}

nlohmann::json vae_header(const VaeConfig& cfg) {
  nlohmann::json h;
  h["kind"] = "vae";
  h["input_dim"] = cfg.input_dim;
  h["latent_dim"] = cfg.latent_dim;
  h["enc_hidden"] = cfg.enc_hidden;
  h["dec_hidden"] = cfg.dec_hidden;
  h["recon"] = cfg.recon == ReconLoss::Bernoulli ? "bernoulli" : "gaussian";
  h["leaky_slope"] = cfg.leaky_slope;
  return h;
}

VaeConfig vae_config_from_header(const nlohmann::json& header) {
  if (header.value("kind", std::string()) != "vae") {
    throw std::runtime_error("checkpoint header is not a vae");
  }
  VaeConfig cfg;
  cfg.input_dim = header.at("input_dim").get<std::size_t>();
  cfg.latent_dim = header.at("latent_dim").get<std::size_t>();
  cfg.enc_hidden = header.at("enc_hidden").get<std::vector<std::size_t>>();
  cfg.dec_hidden = header.at("dec_hidden").get<std::vector<std::size_t>>();
  const std::string recon = header.at("recon").get<std::string>();
  if (recon == "bernoulli") {
    cfg.recon = ReconLoss::Bernoulli;
  } else if (recon == "gaussian") {
    cfg.recon = ReconLoss::Gaussian;
  } else {
    throw std::runtime_error("vae checkpoint has unknown recon kind '" + recon + "'");
  }
  cfg.leaky_slope = header.at("leaky_slope").get<double>();
  cfg.validate();
  return cfg;
}

}  // namespace lvat
