#include "lvat/regularizer.hpp"

#include <cmath>
#include <stdexcept>

#include "lvat/nets.hpp"
#include "lvat/rng.hpp"

namespace lvat {

namespace {

ParamSet detached(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) out.set(name, detach(t));
  return out;
}

// Unit-normalizes each row in place; a row with vanishing norm is replaced by
// the matching row of `fallback` instead of dividing by zero.
void normalize_rows(Tensor& g, const Tensor& fallback) {
  const std::size_t b = g.shape[0];
  const std::size_t d = g.shape[1];
  for (std::size_t i = 0; i < b; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = g.values[i * d + j];
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) {
      g.values[i * d + j] = norm > 0.0 ? g.values[i * d + j] / norm : fallback.values[i * d + j];
    }
  }
}

Tensor random_unit_rows(const Shape& shape, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor d = Tensor::zeros(shape);
  for (double& v : d.values) v = rng.normal();
  // A Gaussian row is nonzero with probability one; guard the impossible
  // corner anyway so normalize_rows always has a unit fallback.
  Tensor ones = Tensor::zeros(shape);
  for (std::size_t i = 0; i < shape[0]; ++i) ones.values[i * shape[1]] = 1.0;
  normalize_rows(d, ones);
  return d;
}

std::vector<double> row_distances(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.shape[0];
  const std::size_t d = a.shape[1];
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = a.values[i * d + j] - b.values[i * d + j];
      sq += diff * diff;
    }
    out[i] = std::sqrt(sq);
  }
  return out;
}

void check_batch(const Tensor& x, std::size_t dim, const char* what) {
  if (x.rank() != 2 || x.shape[1] != dim) {
    throw std::invalid_argument(std::string(what) + ": expected [B x " + std::to_string(dim) +
                                "] batch, got " + shape_str(x.shape));
  }
}

}  // namespace

void PerturbConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("perturb: epsilon must be positive");
  if (!(xi > 0.0)) throw std::invalid_argument("perturb: xi must be positive");
  if (power_iters < 1) throw std::invalid_argument("perturb: power_iters must be at least 1");
}

std::size_t Transformer::input_dim() const {
  return vae_ ? vae_->config.input_dim : flow_->config.input_dim;
}

std::size_t Transformer::latent_dim() const {
  return vae_ ? vae_->config.latent_dim : flow_->config.input_dim;
}

const ParamSet& Transformer::frozen_params() const {
  return vae_ ? vae_->params : flow_->params;
}

Tensor Transformer::encode(const Tensor& x) const {
  return vae_ ? vae_encode_deterministic(vae_->config, vae_->params, x)
              : flow_forward(*flow_, flow_->params, x).z;
}

Tensor Transformer::decode(const Tensor& z) const {
  return vae_ ? vae_decode(vae_->config, vae_->params, z)
              : flow_inverse(*flow_, flow_->params, z);
}

Tensor adv_direction(const ProbeCostFn& cost_fn, const Shape& shape, std::uint64_t seed,
                     const PerturbConfig& cfg) {
  cfg.validate();
  if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0) {
    throw std::invalid_argument("adv_direction: need a nonempty [B x D] shape");
  }
  Tensor d = random_unit_rows(shape, seed);
  for (int iter = 0; iter < cfg.power_iters; ++iter) {
    Tape tape;
    const Tensor probe = tape.input(d * cfg.xi);
    const Tensor cost = cost_fn(tape, probe);
    if (!cost.is_scalar()) throw std::invalid_argument("adv_direction: cost must be scalar");
    tape.backward(cost);
    Tensor g = tape.grad(probe);
    normalize_rows(g, d);
    d = g;
  }
  return d;
}

VatPlan vat_plan(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
                 const PerturbConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.space != PerturbSpace::Input) {
    throw std::invalid_argument("vat: config targets latent space");
  }
  check_batch(x, ccfg.input_dim, "vat");

  const ParamSet frozen = detached(cparams);
  const Tensor xc = detach(x);
  VatPlan plan;
  plan.target_logits = classifier_logits(ccfg, frozen, xc);

  auto probe = [&](Tape&, const Tensor& r) {
    return kl_categorical(plan.target_logits, classifier_logits(ccfg, frozen, add(xc, r)));
  };
  const Tensor d = adv_direction(probe, x.shape, derive_seed(seed, "adv/d0"), cfg);
  plan.r = d * cfg.epsilon;
  return plan;
}

Tensor vat_cost_from_plan(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
                          const VatPlan& plan) {
  return kl_categorical(plan.target_logits,
                        classifier_logits(ccfg, cparams, add(x, plan.r)));
}

AdvResult vat_cost(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
                   const PerturbConfig& cfg, std::uint64_t seed) {
  const VatPlan plan = vat_plan(ccfg, cparams, x, cfg, seed);
  AdvResult out;
  out.cost = vat_cost_from_plan(ccfg, cparams, x, plan);
  out.r = plan.r;
  out.x_adv = add(detach(x), plan.r);
  out.distances = row_distances(x, out.x_adv);
  return out;
}

LvatPlan lvat_plan(const ClassifierConfig& ccfg, const ParamSet& cparams,
                   const Transformer& transformer, const Tensor& x, const PerturbConfig& cfg,
                   std::uint64_t seed) {
  cfg.validate();
  if (cfg.space != PerturbSpace::Latent) {
    throw std::invalid_argument("lvat: config targets input space");
  }
  check_batch(x, ccfg.input_dim, "lvat");
  if (transformer.input_dim() != ccfg.input_dim) {
    throw std::invalid_argument("lvat: transformer covers " +
                                std::to_string(transformer.input_dim()) +
                                " dims but the classifier expects " +
                                std::to_string(ccfg.input_dim));
  }

  const ParamSet frozen = detached(cparams);
  const Tensor xc = detach(x);
  LvatPlan plan;
  plan.target_logits = classifier_logits(ccfg, frozen, xc);
  plan.z = transformer.encode(xc);

  auto probe = [&](Tape&, const Tensor& r) {
    const Tensor decoded = transformer.decode(add(plan.z, r));
    return kl_categorical(plan.target_logits, classifier_logits(ccfg, frozen, decoded));
  };
  const Tensor d = adv_direction(probe, plan.z.shape, derive_seed(seed, "adv/d0"), cfg);
  plan.r = d * cfg.epsilon;
  plan.x_adv = transformer.decode(add(plan.z, plan.r));
  return plan;
}

Tensor lvat_cost_from_plan(const ClassifierConfig& ccfg, const ParamSet& cparams,
                           const LvatPlan& plan) {
  return kl_categorical(plan.target_logits, classifier_logits(ccfg, cparams, plan.x_adv));
}

AdvResult lvat_cost(const ClassifierConfig& ccfg, const ParamSet& cparams,
                    const Transformer& transformer, const Tensor& x, const PerturbConfig& cfg,
                    std::uint64_t seed) {
  const LvatPlan plan = lvat_plan(ccfg, cparams, transformer, x, cfg, seed);
  AdvResult out;
  out.cost = lvat_cost_from_plan(ccfg, cparams, plan);
  out.r = plan.r;
  out.x_adv = plan.x_adv;
  out.distances = row_distances(x, plan.x_adv);
  return out;
}

Tensor pi_cost(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
               const PiConfig& cfg, std::uint64_t seed) {
  if (cfg.sigma < 0.0) throw std::invalid_argument("pi: sigma must be nonnegative");
  check_batch(x, ccfg.input_dim, "pi");
  SplitMix64 rng(derive_seed(seed, "pi"));
  Tensor x1 = detach(x);
  Tensor x2 = detach(x);
  for (double& v : x1.values) v += cfg.sigma * rng.normal();
  for (double& v : x2.values) v += cfg.sigma * rng.normal();
  const Tensor diff = sub(classifier_logits(ccfg, cparams, x1),
                          classifier_logits(ccfg, cparams, x2));
  return reduce_mean(reduce_sum(mul(diff, diff), {1}));
}

}  // namespace lvat
