#include "lvat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "lvat/classifier.hpp"
#include "lvat/flow.hpp"
#include "lvat/nets.hpp"
#include "lvat/regularizer.hpp"
#include "lvat/rng.hpp"
#include "lvat/tensor.hpp"
#include "lvat/vae.hpp"

namespace lvat {

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  SplitMix64 rng(seed);
  for (double& v : t.values) v = rng.normal();
  return t;
}

// Positive values bounded away from zero, for log arguments and denominators.
Tensor random_positive(const Shape& shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  SplitMix64 rng(seed);
  for (double& v : t.values) v = 0.5 + 2.0 * rng.uniform();
  return t;
}

// Values kept a safe margin away from `kink`, so the central difference never
// straddles a non-differentiable point.
Tensor random_off_kink(const Shape& shape, std::uint64_t seed, double kink) {
  Tensor t = Tensor::zeros(shape);
  SplitMix64 rng(seed);
  for (double& v : t.values) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = kink + sign * rng.uniform(0.1, 1.0);
  }
  return t;
}

using TensorFn = std::function<Tensor(const Tensor& x, Tape* tape)>;

// Gradient w.r.t. a single input tensor; everything else inside fn must be a
// constant. With a null tape the ops run value-only, which is what the
// numeric side of the comparison uses.
GradCheck probe_tensor(const std::string& name, const TensorFn& fn, const Tensor& x0,
                       const GradCheckOptions& opts, bool corrupt_here) {
  Tape tape;
  Tensor xr = tape.input(x0);
  tape.backward(fn(xr, &tape));
  Tensor g = tape.grad(xr);
  if (corrupt_here) g.values[0] += 1.0;

  GradCheck result{name, 0.0, g.values.size(), false};
  Tensor x = detach(x0);
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double keep = x.values[i];
    x.values[i] = keep + opts.step;
    const double up = fn(x, nullptr).item();
    x.values[i] = keep - opts.step;
    const double down = fn(x, nullptr).item();
    x.values[i] = keep;
    const double numeric = (up - down) / (2.0 * opts.step);
    result.max_rel_err = std::max(result.max_rel_err, rel_err(g.values[i], numeric));
  }
  result.passed = result.max_rel_err < opts.tol;
  return result;
}

using ParamFn = std::function<Tensor(const ParamSet& params)>;

// Gradient w.r.t. every tensor of a parameter set, which is the view the
// optimizer has of the end-to-end training graphs.
GradCheck probe_params(const std::string& name, const ParamFn& fn, const ParamSet& p0,
                       const GradCheckOptions& opts) {
  Tape tape;
  ParamSet live = p0.recorded(tape);
  tape.backward(fn(live));

  GradCheck result{name, 0.0, 0, false};
  ParamSet work = p0;
  for (const auto& [pname, t] : live) {
    const Tensor g = tape.grad(t);
    Tensor& wt = work.at(pname);
    for (std::size_t i = 0; i < wt.values.size(); ++i) {
      const double keep = wt.values[i];
      wt.values[i] = keep + opts.step;
      const double up = fn(work).item();
      wt.values[i] = keep - opts.step;
      const double down = fn(work).item();
      wt.values[i] = keep;
      const double numeric = (up - down) / (2.0 * opts.step);
      result.max_rel_err = std::max(result.max_rel_err, rel_err(g.values[i], numeric));
      ++result.checked;
    }
  }
  result.passed = result.max_rel_err < opts.tol;
  return result;
}

}  // namespace

std::vector<GradCheck> run_gradchecks(const GradCheckOptions& opts) {
  std::vector<GradCheck> out;

  // Elementwise ops, reduced to a scalar through a fixed random weighting so
  // every output entry contributes to the checked gradient.
  const Shape s{3, 4};
  const Tensor w = random_tensor(s, 101);
  const Tensor c = random_tensor(s, 102);
  const Tensor cpos = random_positive(s, 103);

  auto input_check = [&](const std::string& name, const TensorFn& fn, const Tensor& x0) {
    out.push_back(probe_tensor(name, fn, x0, opts, opts.corrupt && name == "mul"));
  };

  input_check("add", [&](const Tensor& x, Tape*) { return reduce_sum(mul(add(x, c), w)); },
              random_tensor(s, 1));
  input_check("sub", [&](const Tensor& x, Tape*) { return reduce_sum(mul(sub(c, x), w)); },
              random_tensor(s, 2));
  input_check("mul", [&](const Tensor& x, Tape*) { return reduce_sum(mul(mul(x, c), w)); },
              random_tensor(s, 3));
  input_check("div", [&](const Tensor& x, Tape*) { return reduce_sum(mul(div(x, cpos), w)); },
              random_tensor(s, 4));
  input_check("div-denominator",
              [&](const Tensor& x, Tape*) { return reduce_sum(mul(div(c, x), w)); },
              random_positive(s, 5));
  input_check("exp", [&](const Tensor& x, Tape*) { return reduce_sum(mul(exp(x), w)); },
              random_tensor(s, 6));
  input_check("log", [&](const Tensor& x, Tape*) { return reduce_sum(mul(log(x), w)); },
              random_positive(s, 7));
  input_check("tanh", [&](const Tensor& x, Tape*) { return reduce_sum(mul(tanh(x), w)); },
              random_tensor(s, 8));
  input_check("sigmoid", [&](const Tensor& x, Tape*) { return reduce_sum(mul(sigmoid(x), w)); },
              random_tensor(s, 9));
  input_check("softplus", [&](const Tensor& x, Tape*) { return reduce_sum(mul(softplus(x), w)); },
              random_tensor(s, 10));
  input_check("leaky-relu",
              [&](const Tensor& x, Tape*) { return reduce_sum(mul(leaky_relu(x, 0.1), w)); },
              random_off_kink(s, 11, 0.0));
  input_check("clamp",
              [&](const Tensor& x, Tape*) { return reduce_sum(mul(clamp(x, -0.8, 0.8), w)); },
              random_off_kink(s, 12, 0.8));

  // Structural ops.
  const Tensor w32 = random_tensor({3, 2}, 104);
  const Tensor c42 = random_tensor({4, 2}, 105);
  input_check("matmul-left",
              [&](const Tensor& x, Tape*) { return reduce_sum(mul(matmul(x, c42), w32)); },
              random_tensor(s, 13));
  input_check("matmul-right",
              [&](const Tensor& x, Tape*) { return reduce_sum(mul(matmul(c, x), w32)); },
              random_tensor({4, 2}, 14));

  const Tensor w3 = random_tensor({3}, 106);
  input_check("reduce-sum-rows",
              [&](const Tensor& x, Tape*) { return reduce_sum(mul(reduce_sum(x, {1}), w3)); },
              random_tensor(s, 15));
  input_check("reduce-mean",
              [&](const Tensor& x, Tape*) { return mul(reduce_mean(x), Tensor::scalar(2.5)); },
              random_tensor(s, 16));

  input_check("concat-slice",
              [&](const Tensor& x, Tape*) {
                return reduce_sum(mul(slice(concat({x, c}, 1), 1, 2, 6), w));
              },
              random_tensor(s, 17));

  const Tensor w36 = random_tensor({3, 6}, 107);
  input_check("gather-scatter",
              [&](const Tensor& x, Tape*) {
                const Tensor picked = gather_cols(x, {1, 0, 3, 2});
                return reduce_sum(mul(scatter_cols(picked, {4, 0, 2, 5}, 6), w36));
              },
              random_tensor(s, 18));

  // Probability heads.
  const Tensor target_logits = random_tensor({4, 3}, 108);
  const std::vector<int> labels{0, 2, 1, 1};
  const Tensor w43 = random_tensor({4, 3}, 109);
  input_check("log-softmax",
              [&](const Tensor& x, Tape*) { return reduce_sum(mul(log_softmax(x), w43)); },
              random_tensor({4, 3}, 19));
  input_check("cross-entropy",
              [&](const Tensor& x, Tape*) { return cross_entropy(x, labels); },
              random_tensor({4, 3}, 20));
  input_check("kl-categorical",
              [&](const Tensor& x, Tape*) { return kl_categorical(target_logits, x); },
              random_tensor({4, 3}, 21));
  const Tensor logvar_const = random_tensor({4, 2}, 110);
  input_check("gaussian-kl-mu",
              [&](const Tensor& x, Tape*) { return gaussian_kl(x, logvar_const); },
              random_tensor({4, 2}, 22));
  const Tensor mu_const = random_tensor({4, 2}, 111);
  input_check("gaussian-kl-logvar",
              [&](const Tensor& x, Tape*) { return gaussian_kl(mu_const, x); },
              random_tensor({4, 2}, 23));

  // End-to-end graphs on small models, probed in parameter space: exactly the
  // gradients the optimizer consumes during training.
  ClassifierConfig ccfg;
  ccfg.input_dim = 2;
  ccfg.hidden = {6};
  ccfg.num_classes = 2;
  const ClassifierModel cls = make_classifier(ccfg, 301);
  const Tensor xb = random_tensor({4, 2}, 302);

  out.push_back(probe_params(
      "classifier-cross-entropy",
      [&](const ParamSet& p) {
        return cross_entropy(classifier_logits(ccfg, p, xb), std::vector<int>{0, 1, 1, 0});
      },
      cls.params, opts));

  VaeConfig vcfg;
  vcfg.input_dim = 2;
  vcfg.latent_dim = 2;
  vcfg.enc_hidden = {6};
  vcfg.dec_hidden = {6};
  vcfg.recon = ReconLoss::Gaussian;
  const VaeModel vae = make_vae(vcfg, 303);
  out.push_back(probe_params(
      "vae-elbo",
      [&](const ParamSet& p) {
        // The sampling noise is re-seeded per evaluation so the loss stays a
        // deterministic function of the parameters under the probe.
        SplitMix64 noise(401);
        return vae_loss(vcfg, p, xb, noise).total;
      },
      vae.params, opts));

  FlowConfig fcfg;
  fcfg.input_dim = 2;
  fcfg.couplings = 2;
  fcfg.cond_hidden = {6};
  FlowModel flow = make_flow(fcfg, 304);
  {
    // A fresh flow has zero conditioner output layers; jitter them so the
    // coupling gradients are exercised at a generic point.
    SplitMix64 jitter(305);
    for (auto& [pname, t] : flow.params) {
      for (double& v : t.values) v += 0.05 * jitter.normal();
    }
  }
  out.push_back(probe_params(
      "flow-nll",
      [&](const ParamSet& p) { return neg(flow_log_likelihood(flow, p, xb)); }, flow.params,
      opts));

  // The consistency costs as seen from the classifier parameters, with the
  // target and perturbation planned once and then held fixed, mirroring one
  // training update.
  PerturbConfig vat_pc;
  vat_pc.epsilon = 0.5;
  const VatPlan vplan = vat_plan(ccfg, cls.params, xb, vat_pc, 306);
  out.push_back(probe_params(
      "vat-cost",
      [&](const ParamSet& p) { return vat_cost_from_plan(ccfg, p, xb, vplan); }, cls.params,
      opts));

  PerturbConfig lat_pc;
  lat_pc.epsilon = 0.5;
  lat_pc.space = PerturbSpace::Latent;
  const Transformer flow_tf = Transformer::from(flow);
  const LvatPlan fplan = lvat_plan(ccfg, cls.params, flow_tf, xb, lat_pc, 307);
  out.push_back(probe_params(
      "lvat-cost-flow",
      [&](const ParamSet& p) { return lvat_cost_from_plan(ccfg, p, fplan); }, cls.params, opts));

  const Transformer vae_tf = Transformer::from(vae);
  const LvatPlan vplan2 = lvat_plan(ccfg, cls.params, vae_tf, xb, lat_pc, 308);
  out.push_back(probe_params(
      "lvat-cost-vae",
      [&](const ParamSet& p) { return lvat_cost_from_plan(ccfg, p, vplan2); }, cls.params, opts));

  // Probe costs of the direction search: gradient w.r.t. the perturbation
  // itself, including the path through the frozen decoder.
  const Tensor clean_logits = classifier_logits(ccfg, cls.params, xb);
  input_check("adv-probe-input",
              [&](const Tensor& d, Tape*) {
                return kl_categorical(clean_logits, classifier_logits(ccfg, cls.params, add(xb, d)));
              },
              random_tensor({4, 2}, 24));

  const Tensor z_flow = flow_tf.encode(xb);
  input_check("adv-probe-flow",
              [&](const Tensor& d, Tape*) {
                const Tensor xa = flow_tf.decode(add(z_flow, d));
                return kl_categorical(clean_logits, classifier_logits(ccfg, cls.params, xa));
              },
              random_tensor({4, 2}, 25));

  const Tensor z_vae = vae_tf.encode(xb);
  input_check("adv-probe-vae",
              [&](const Tensor& d, Tape*) {
                const Tensor xa = vae_tf.decode(add(z_vae, d));
                return kl_categorical(clean_logits, classifier_logits(ccfg, cls.params, xa));
              },
              random_tensor({4, 2}, 26));

  return out;
}

bool all_passed(const std::vector<GradCheck>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const GradCheck& r) { return r.passed; });
}

std::string worst_offender(const std::vector<GradCheck>& results) {
  std::string name;
  double worst = -1.0;
  for (const GradCheck& r : results) {
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      name = r.name;
    }
  }
  return name;
}

}  // namespace lvat
