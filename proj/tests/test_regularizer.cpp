#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "eigen_oracle.hpp"
#include "fd_oracle.hpp"
#include "lvat/dataio.hpp"
#include "lvat/regularizer.hpp"
#include "lvat/rng.hpp"

using lvat::PerturbConfig;
using lvat::Tensor;

namespace {

lvat::ClassifierConfig small_classifier_cfg() {
  lvat::ClassifierConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {16};
  cfg.num_classes = 2;
  return cfg;
}

Tensor moon_batch(std::size_t n, std::uint64_t seed) {
  lvat::Dataset ds = lvat::gen_two_moons(n, 0.1, seed);
  const lvat::Standardizer st = lvat::fit_standardizer(ds);
  lvat::apply_standardizer(st, ds);
  return ds.features;
}

double row_norm(const Tensor& t, std::size_t i) {
  double sq = 0.0;
  for (std::size_t j = 0; j < t.shape[1]; ++j) {
    const double v = t.values[i * t.shape[1] + j];
    sq += v * v;
  }
  return std::sqrt(sq);
}

lvat::FlowModel roughly_trained_flow(std::uint64_t seed) {
  // A loosely fitted flow is all the latent tests need; exact likelihood
  // quality is the trainer's problem.
  lvat::Dataset ds = lvat::gen_two_moons(128, 0.1, seed);
  const lvat::Standardizer st = lvat::fit_standardizer(ds);
  lvat::apply_standardizer(st, ds);
  lvat::FlowConfig cfg;
  cfg.input_dim = 2;
  cfg.couplings = 4;
  cfg.cond_hidden = {16};
  lvat::FlowModel m = lvat::make_flow(cfg, seed);
  for (int step = 0; step < 60; ++step) {
    lvat::Tape tape;
    lvat::ParamSet live = m.params.recorded(tape);
    const Tensor nll = lvat::neg(lvat::flow_log_likelihood(m, live, ds.features));
    tape.backward(nll);
    for (auto& [name, t] : m.params) {
      const Tensor g = tape.grad(live.at(name));
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= 0.02 * g.values[i];
    }
  }
  return m;
}

}  // namespace

TEST_CASE("perturbation norms hit epsilon in the right space") {
  const lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 3);
  const Tensor x = moon_batch(32, 5);

  for (const double eps : {0.5, 2.5, 10.0}) {
    CAPTURE(eps);
    PerturbConfig cfg;
    cfg.epsilon = eps;
    const lvat::AdvResult res = lvat::vat_cost(ccfg, model.params, x, cfg, 11);
    REQUIRE(res.r.shape == x.shape);
    for (std::size_t i = 0; i < 32; ++i) {
      CHECK(std::abs(row_norm(res.r, i) - eps) < 1e-9);
      CHECK(std::abs(res.distances[i] - eps) < 1e-9);
    }
  }

  const lvat::FlowModel flow = roughly_trained_flow(7);
  const lvat::Transformer tf = lvat::Transformer::from(flow);
  PerturbConfig lcfg;
  lcfg.epsilon = 1.0;
  lcfg.space = lvat::PerturbSpace::Latent;
  const lvat::AdvResult res = lvat::lvat_cost(ccfg, model.params, tf, x, lcfg, 11);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(std::abs(row_norm(res.r, i) - 1.0) < 1e-9);
  }
  // Input-space displacement is not constant for a nonlinear transformer.
  double lo = res.distances[0], hi = res.distances[0];
  for (const double d : res.distances) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  CHECK(hi - lo > 1e-6);
}

TEST_CASE("adv_direction returns deterministic unit rows") {
  auto quad = [](lvat::Tape&, const Tensor& r) { return lvat::reduce_sum(lvat::mul(r, r)); };
  PerturbConfig cfg;
  cfg.epsilon = 1.0;
  const Tensor d1 = lvat::adv_direction(quad, {5, 3}, 21, cfg);
  const Tensor d2 = lvat::adv_direction(quad, {5, 3}, 21, cfg);
  const Tensor d3 = lvat::adv_direction(quad, {5, 3}, 22, cfg);
  CHECK(d1.values == d2.values);
  CHECK(d1.values != d3.values);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(row_norm(d1, i) - 1.0) < 1e-12);

  CHECK_THROWS_AS(lvat::adv_direction(quad, {5}, 1, cfg), std::invalid_argument);
  PerturbConfig bad = cfg;
  bad.power_iters = 0;
  CHECK_THROWS_AS(lvat::adv_direction(quad, {5, 3}, 1, bad), std::invalid_argument);
  bad = cfg;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(lvat::adv_direction(quad, {5, 3}, 1, bad), std::invalid_argument);
  bad = cfg;
  bad.xi = -1e-6;
  CHECK_THROWS_AS(lvat::adv_direction(quad, {5, 3}, 1, bad), std::invalid_argument);
}

TEST_CASE("power iterations converge to the dominant eigenvector") {
  // H = M^T M + 0.1 I is symmetric positive definite with a generic spectrum.
  const std::size_t n = 4;
  lvat::SplitMix64 rng(17);
  std::vector<double> m(n * n);
  for (double& v : m) v = rng.normal();
  std::vector<double> h(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) h[i * n + j] += m[k * n + i] * m[k * n + j];
    }
    h[i * n + i] += 0.1;
  }

  // Sanity of the oracle itself: A v = lambda v for every pair it returns.
  const eig::Result full = eig::jacobi(h, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      double av = 0.0;
      for (std::size_t k = 0; k < n; ++k) av += h[i * n + k] * full.vectors[k * n + j];
      CHECK(std::abs(av - full.values[j] * full.vectors[i * n + j]) < 1e-9);
    }
  }

  const Tensor hc = Tensor::from(h, {n, n});
  auto quad_cost = [&](lvat::Tape&, const Tensor& r) {
    return lvat::reduce_sum(lvat::mul(lvat::matmul(r, hc), r)) * 0.5;
  };
  PerturbConfig cfg;
  cfg.epsilon = 1.0;
  cfg.power_iters = 20;
  const Tensor d = lvat::adv_direction(quad_cost, {1, n}, 29, cfg);
  const std::vector<double> top = eig::top_eigenvector(h, n);
  CHECK(std::abs(eig::cosine(d.values, top)) >= 0.99);
}

TEST_CASE("constant classifier yields zero cost through the fallback") {
  lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 1);
  for (auto& [name, t] : model.params) {
    (void)name;
    for (double& v : t.values) v = 0.0;
  }
  const Tensor x = moon_batch(8, 9);
  PerturbConfig cfg;
  cfg.epsilon = 2.0;
  const lvat::AdvResult res = lvat::vat_cost(ccfg, model.params, x, cfg, 31);
  CHECK(res.cost.item() == 0.0);
  // The probe gradient vanished everywhere, so the random start survived
  // normalization and the perturbation still has full magnitude.
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(row_norm(res.r, i) - 2.0) < 1e-9);
}

TEST_CASE("vat direction aligns with the kl hessian eigenvector") {
  // Linear softmax on a single point: the local kl is an exact quadratic, so
  // a finite-difference Hessian plus dense eigendecomposition pins down the
  // direction the power method should find.
  lvat::ClassifierConfig ccfg;
  ccfg.input_dim = 2;
  ccfg.hidden = {};
  ccfg.num_classes = 2;
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 13);
  const Tensor x = Tensor::from({0.4, -0.7}, {1, 2});

  const Tensor target = lvat::classifier_logits(ccfg, model.params, x);
  auto cost_at = [&](double r0, double r1) {
    const Tensor shifted = lvat::add(x, Tensor::from({r0, r1}, {1, 2}));
    return lvat::kl_categorical(target, lvat::classifier_logits(ccfg, model.params, shifted))
        .item();
  };
  const double h = 1e-3;
  std::vector<double> hess(4);
  const double step[2][2] = {{h, 0.0}, {0.0, h}};
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      hess[i * 2 + j] = (cost_at(step[i][0] + step[j][0], step[i][1] + step[j][1]) -
                         cost_at(step[i][0] - step[j][0], step[i][1] - step[j][1]) -
                         cost_at(step[j][0] - step[i][0], step[j][1] - step[i][1]) +
                         cost_at(-step[i][0] - step[j][0], -step[i][1] - step[j][1])) /
                        (4.0 * h * h);
    }
  }

  PerturbConfig cfg;
  cfg.epsilon = 0.5;
  cfg.power_iters = 3;
  const lvat::AdvResult res = lvat::vat_cost(ccfg, model.params, x, cfg, 41);
  std::vector<double> r_unit = {res.r.values[0] / cfg.epsilon, res.r.values[1] / cfg.epsilon};
  CHECK(std::abs(eig::cosine(r_unit, eig::top_eigenvector(hess, 2))) >= 0.99);
}

TEST_CASE("identity flow reproduces vat exactly") {
  const lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 19);
  const lvat::FlowModel id = lvat::make_identity_flow(2);
  const lvat::Transformer tf = lvat::Transformer::from(id);

  for (int b = 0; b < 20; ++b) {
    const Tensor x = moon_batch(16, 100 + static_cast<std::uint64_t>(b));
    PerturbConfig vcfg;
    vcfg.epsilon = 1.5;
    PerturbConfig lcfg = vcfg;
    lcfg.space = lvat::PerturbSpace::Latent;
    const std::uint64_t seed = 500 + static_cast<std::uint64_t>(b);
    const lvat::AdvResult v = lvat::vat_cost(ccfg, model.params, x, vcfg, seed);
    const lvat::AdvResult l = lvat::lvat_cost(ccfg, model.params, tf, x, lcfg, seed);
    CHECK(std::abs(v.cost.item() - l.cost.item()) <= 1e-12);
    CHECK(v.r.values == l.r.values);
    CHECK(v.x_adv.values == l.x_adv.values);
  }
}

TEST_CASE("transformer parameters stay out of reach") {
  const lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 23);
  const lvat::FlowModel flow = roughly_trained_flow(3);
  const std::vector<double> before = flow.params.at("flow/c0/layer0/W").values;
  const lvat::Transformer tf = lvat::Transformer::from(flow);
  const Tensor x = moon_batch(8, 6);

  lvat::Tape tape;
  const lvat::ParamSet live = model.params.recorded(tape);
  PerturbConfig cfg;
  cfg.epsilon = 1.0;
  cfg.space = lvat::PerturbSpace::Latent;
  const lvat::AdvResult res = lvat::lvat_cost(ccfg, live, tf, x, cfg, 77);
  REQUIRE(res.cost.recorded());
  tape.backward(res.cost);

  // Classifier parameters receive gradients; the transformer was never
  // recorded, so asking for its gradient is a contract violation, and its
  // values are bitwise untouched.
  double total = 0.0;
  for (const auto& [name, t] : live) {
    (void)name;
    for (const double g : tape.grad(t).values) total += std::abs(g);
  }
  CHECK(total > 0.0);
  CHECK_THROWS_AS(tape.grad(flow.params.at("flow/c0/layer0/W")), std::invalid_argument);
  CHECK(flow.params.at("flow/c0/layer0/W").values == before);
}

TEST_CASE("found direction beats a random one on a trained classifier") {
  // Quick cross-entropy fit so the classifier has genuine structure.
  const lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 29);
  lvat::Dataset train = lvat::gen_two_moons(200, 0.1, 51);
  const lvat::Standardizer st = lvat::fit_standardizer(train);
  lvat::apply_standardizer(st, train);
  for (int step = 0; step < 200; ++step) {
    lvat::Tape tape;
    const lvat::ParamSet live = model.params.recorded(tape);
    const Tensor loss =
        lvat::cross_entropy(lvat::classifier_logits(ccfg, live, train.features), train.labels);
    tape.backward(loss);
    for (auto& [name, t] : model.params) {
      const Tensor g = tape.grad(live.at(name));
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= 0.5 * g.values[i];
    }
  }

  PerturbConfig cfg;
  cfg.epsilon = 0.5;
  double adv_mean = 0.0, rand_mean = 0.0;
  const int batches = 120;
  for (int b = 0; b < batches; ++b) {
    const std::uint64_t bs = 900 + static_cast<std::uint64_t>(b);
    lvat::Dataset batch = lvat::gen_two_moons(16, 0.1, bs);
    lvat::apply_standardizer(st, batch);
    const Tensor x = batch.features;
    const lvat::AdvResult res = lvat::vat_cost(ccfg, model.params, x, cfg, bs);
    adv_mean += res.cost.item();

    // Same magnitude along a fresh random unit direction.
    lvat::SplitMix64 rng(lvat::derive_seed(bs, "baseline"));
    Tensor r = Tensor::zeros(x.shape);
    for (double& v : r.values) v = rng.normal();
    for (std::size_t i = 0; i < x.shape[0]; ++i) {
      const double norm = row_norm(r, i);
      for (std::size_t j = 0; j < 2; ++j) r.values[i * 2 + j] *= cfg.epsilon / norm;
    }
    const Tensor target = lvat::classifier_logits(ccfg, model.params, x);
    rand_mean += lvat::kl_categorical(
                     target, lvat::classifier_logits(ccfg, model.params, lvat::add(x, r)))
                     .item();
  }
  adv_mean /= batches;
  rand_mean /= batches;
  CHECK(adv_mean > rand_mean);
}

TEST_CASE("pi cost is a nonnegative seeded baseline") {
  const lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 31);
  const Tensor x = moon_batch(16, 8);

  lvat::PiConfig off;
  off.sigma = 0.0;
  CHECK(lvat::pi_cost(ccfg, model.params, x, off, 1).item() == 0.0);

  lvat::PiConfig on;
  on.sigma = 0.1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double c = lvat::pi_cost(ccfg, model.params, x, on, seed).item();
    CHECK(c > 0.0);
  }
  CHECK(lvat::pi_cost(ccfg, model.params, x, on, 5).item() ==
        lvat::pi_cost(ccfg, model.params, x, on, 5).item());

  lvat::PiConfig bad;
  bad.sigma = -0.1;
  CHECK_THROWS_AS(lvat::pi_cost(ccfg, model.params, x, bad, 1), std::invalid_argument);
}

TEST_CASE("stage two gradients match finite differences") {
  lvat::ClassifierConfig ccfg;
  ccfg.input_dim = 2;
  ccfg.hidden = {6};
  ccfg.num_classes = 3;
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 37);
  const Tensor x = moon_batch(4, 12);
  PerturbConfig vcfg;
  vcfg.epsilon = 0.8;

  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : model.params) {
    names.push_back(name);
    inputs.push_back(t);
  }
  auto rebuild = [&](const std::vector<Tensor>& in) {
    lvat::ParamSet live;
    for (std::size_t i = 0; i < names.size(); ++i) live.set(names[i], in[i]);
    return live;
  };

  const lvat::VatPlan vplan = lvat::vat_plan(ccfg, model.params, x, vcfg, 3);
  auto vat_graph = [&](lvat::Tape&, const std::vector<Tensor>& in) {
    return lvat::vat_cost_from_plan(ccfg, rebuild(in), x, vplan);
  };
  CHECK(fd::check(vat_graph, inputs).max_rel_err < 1e-5);

  PerturbConfig lcfg = vcfg;
  lcfg.space = lvat::PerturbSpace::Latent;

  const lvat::FlowModel flow = roughly_trained_flow(5);
  const lvat::Transformer tf = lvat::Transformer::from(flow);
  const lvat::LvatPlan fplan = lvat::lvat_plan(ccfg, model.params, tf, x, lcfg, 3);
  auto lvat_flow_graph = [&](lvat::Tape&, const std::vector<Tensor>& in) {
    return lvat::lvat_cost_from_plan(ccfg, rebuild(in), fplan);
  };
  CHECK(fd::check(lvat_flow_graph, inputs).max_rel_err < 1e-5);

  lvat::VaeConfig vaecfg;
  vaecfg.input_dim = 2;
  vaecfg.latent_dim = 2;
  vaecfg.enc_hidden = {8};
  vaecfg.dec_hidden = {8};
  const lvat::VaeModel vae = lvat::make_vae(vaecfg, 9);
  const lvat::Transformer tv = lvat::Transformer::from(vae);
  const lvat::LvatPlan vplan2 = lvat::lvat_plan(ccfg, model.params, tv, x, lcfg, 3);
  auto lvat_vae_graph = [&](lvat::Tape&, const std::vector<Tensor>& in) {
    return lvat::lvat_cost_from_plan(ccfg, rebuild(in), vplan2);
  };
  CHECK(fd::check(lvat_vae_graph, inputs).max_rel_err < 1e-5);

  // The probe gradient in the perturbation is what the direction search
  // consumes, so it gets the same treatment, here through the flow decoder.
  const Tensor target = lvat::classifier_logits(ccfg, model.params, x);
  const Tensor z = tf.encode(x);
  auto probe_graph = [&](lvat::Tape&, const std::vector<Tensor>& in) {
    const Tensor decoded = tf.decode(lvat::add(z, in[0]));
    return lvat::kl_categorical(target, lvat::classifier_logits(ccfg, model.params, decoded));
  };
  lvat::SplitMix64 rrng(15);
  Tensor r0 = Tensor::zeros({4, 2});
  for (double& v : r0.values) v = 0.05 * rrng.normal();
  CHECK(fd::check(probe_graph, {r0}).max_rel_err < 1e-5);
}

TEST_CASE("cost lands on the caller's tape only when asked") {
  const lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 43);
  const Tensor x = moon_batch(4, 14);
  PerturbConfig cfg;
  cfg.epsilon = 1.0;

  const lvat::AdvResult plain = lvat::vat_cost(ccfg, model.params, x, cfg, 2);
  CHECK_FALSE(plain.cost.recorded());

  lvat::Tape tape;
  const lvat::ParamSet live = model.params.recorded(tape);
  const lvat::AdvResult rec = lvat::vat_cost(ccfg, live, x, cfg, 2);
  CHECK(rec.cost.recorded());
  CHECK(rec.cost.item() == plain.cost.item());
}

TEST_CASE("space and dimension validation") {
  const lvat::ClassifierConfig ccfg = small_classifier_cfg();
  lvat::ClassifierModel model = lvat::make_classifier(ccfg, 47);
  const Tensor x = moon_batch(4, 16);

  PerturbConfig latent;
  latent.space = lvat::PerturbSpace::Latent;
  CHECK_THROWS_AS(lvat::vat_cost(ccfg, model.params, x, latent, 1), std::invalid_argument);

  const lvat::FlowModel id = lvat::make_identity_flow(2);
  const lvat::Transformer tf = lvat::Transformer::from(id);
  PerturbConfig input;
  CHECK_THROWS_AS(lvat::lvat_cost(ccfg, model.params, tf, x, input, 1), std::invalid_argument);

  const lvat::FlowModel wide = lvat::make_identity_flow(5);
  const lvat::Transformer tw = lvat::Transformer::from(wide);
  CHECK_THROWS_AS(lvat::lvat_cost(ccfg, model.params, tw, x, latent, 1), std::invalid_argument);

  CHECK_THROWS_AS(lvat::vat_cost(ccfg, model.params, Tensor::zeros({4, 3}), input, 1),
                  std::invalid_argument);
}
