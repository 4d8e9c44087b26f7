#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "lvat/nets.hpp"
#include "lvat/rng.hpp"
#include "lvat/tensor.hpp"

namespace lvat {

// Reconstruction likelihood for the decoder output. Bernoulli treats the
// decoder as per-pixel logits (data in [0, 1]); Gaussian is a plain squared
// error and suits standardized point clouds.
enum class ReconLoss { Bernoulli, Gaussian };

struct VaeConfig {
  std::size_t input_dim = 2;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> enc_hidden = {64, 64};
  std::vector<std::size_t> dec_hidden = {64, 64};
  ReconLoss recon = ReconLoss::Gaussian;
  double leaky_slope = 0.1;

  void validate() const;
};

struct VaeModel {
  VaeConfig config;
  ParamSet params;
};

VaeModel make_vae(const VaeConfig& cfg, std::uint64_t seed);

// Posterior parameters, each [B x latent_dim]. log_var is clamped to
// [-10, 10] so exp() stays tame while gradients keep flowing inside the band.
struct VaeEncoding {
  Tensor mu;
  Tensor log_var;
};
VaeEncoding vae_encode_stats(const VaeConfig& cfg, const ParamSet& params, const Tensor& x);

// Sampled latent z = mu + exp(log_var / 2) * eps. The noise eps enters the
// graph as a constant, so gradients reach mu and log_var only; this is the
// reparameterization trick and keeps the loss differentiable in the encoder.
Tensor vae_encode(const VaeConfig& cfg, const ParamSet& params, const Tensor& x, SplitMix64& rng);

// Noise-free encoding (the posterior mean). Latent-space perturbations are
// applied to this point so the attack direction is not polluted by sampling.
Tensor vae_encode_deterministic(const VaeConfig& cfg, const ParamSet& params, const Tensor& x);

Tensor vae_decode_logits(const VaeConfig& cfg, const ParamSet& params, const Tensor& z);
// Data-space reconstruction: sigmoid of the logits for Bernoulli, identity
// for Gaussian.
Tensor vae_decode(const VaeConfig& cfg, const ParamSet& params, const Tensor& z);

// Negative evidence lower bound, averaged over the batch. recon sums over
// input dimensions per sample; kl is the standard normal prior term.
struct VaeLoss {
  Tensor total;
  Tensor recon;
  Tensor kl;
};
VaeLoss vae_loss(const VaeConfig& cfg, const ParamSet& params, const Tensor& x, SplitMix64& rng);

nlohmann::json vae_header(const VaeConfig& cfg);
VaeConfig vae_config_from_header(const nlohmann::json& header);

}  // namespace lvat
