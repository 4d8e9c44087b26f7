#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lvat/classifier.hpp"
#include "lvat/flow.hpp"
#include "lvat/tensor.hpp"
#include "lvat/vae.hpp"

namespace lvat {

// Where the adversarial perturbation is injected.
enum class PerturbSpace { Input, Latent };

struct PerturbConfig {
  double epsilon = 1.0;   // L2 magnitude of the final perturbation
  double xi = 1e-6;       // finite-difference probe step
  int power_iters = 1;    // gradient-normalize refinements of the direction
  PerturbSpace space = PerturbSpace::Input;

  void validate() const;
};

// Non-owning view over whichever generative model supplies Enc/Dec. The
// referenced model must outlive the wrapper. Its parameters are frozen by
// construction: they are never recorded on a tape, so the consistency cost
// cannot reach them no matter what the caller differentiates.
class Transformer {
 public:
  static Transformer from(const VaeModel& m) { return Transformer(&m, nullptr); }
  static Transformer from(const FlowModel& m) { return Transformer(nullptr, &m); }

  std::size_t input_dim() const;
  std::size_t latent_dim() const;
  bool lossless() const { return flow_ != nullptr; }
  const ParamSet& frozen_params() const;

  // Deterministic encode: flow forward, or the VAE posterior mean.
  Tensor encode(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;

 private:
  Transformer(const VaeModel* v, const FlowModel* f) : vae_(v), flow_(f) {}
  const VaeModel* vae_;
  const FlowModel* flow_;
};

// Probe cost used by the direction search: receives a tape-recorded
// perturbation r and returns the scalar consistency cost at that r. Only r is
// recorded, so the returned gradient is exactly the derivative in r.
using ProbeCostFn = std::function<Tensor(Tape&, const Tensor& r)>;

// Power-method search for the most sensitive direction. Starts from a seeded
// random per-sample unit vector, then repeats g <- grad of cost at xi * d,
// d <- g normalized per sample. Rows whose gradient vanishes keep their
// previous direction, which leaves a constant classifier with a well defined
// (zero cost) perturbation.
Tensor adv_direction(const ProbeCostFn& cost_fn, const Shape& shape, std::uint64_t seed,
                     const PerturbConfig& cfg);

struct AdvResult {
  // Scalar consistency cost; lands on the tape of the classifier parameters,
  // so pass recorded copies to train and plain ones to just evaluate.
  Tensor cost;
  Tensor r;                       // constant perturbation, unit rows times eps
  Tensor x_adv;                   // constant adversarial batch in input space
  std::vector<double> distances;  // per-sample ||x - x_adv||_2
};

// The cost computation is split in two stages. The plan stage runs without a
// tape: it fixes the target distribution and the perturbation, both of which
// are constants of the final loss (the target is a stopped gradient and the
// direction search is not differentiated through). The second stage rebuilds
// the cost from those constants and is the only part the optimizer sees, so
// a finite-difference probe of stage two checks exactly what training
// differentiates.
struct VatPlan {
  Tensor target_logits;  // f(X) held constant
  Tensor r;              // [B x D], per-sample norm epsilon
};

VatPlan vat_plan(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
                 const PerturbConfig& cfg, std::uint64_t seed);
Tensor vat_cost_from_plan(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
                          const VatPlan& plan);
AdvResult vat_cost(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
                   const PerturbConfig& cfg, std::uint64_t seed);

struct LvatPlan {
  Tensor target_logits;
  Tensor z;      // Enc(X), constant
  Tensor r;      // [B x d_z], per-sample norm epsilon
  Tensor x_adv;  // Dec(z + r), constant
};

LvatPlan lvat_plan(const ClassifierConfig& ccfg, const ParamSet& cparams,
                   const Transformer& transformer, const Tensor& x, const PerturbConfig& cfg,
                   std::uint64_t seed);
Tensor lvat_cost_from_plan(const ClassifierConfig& ccfg, const ParamSet& cparams,
                           const LvatPlan& plan);
AdvResult lvat_cost(const ClassifierConfig& ccfg, const ParamSet& cparams,
                    const Transformer& transformer, const Tensor& x, const PerturbConfig& cfg,
                    std::uint64_t seed);

// Consistency baseline: squared L2 between the logits of two independent
// Gaussian corruptions of the batch, mean over samples.
struct PiConfig {
  double sigma = 0.1;
};

Tensor pi_cost(const ClassifierConfig& ccfg, const ParamSet& cparams, const Tensor& x,
               const PiConfig& cfg, std::uint64_t seed);

}  // namespace lvat
