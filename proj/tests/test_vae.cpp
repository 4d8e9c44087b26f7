#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fd_oracle.hpp"
#include "lvat/dataio.hpp"
#include "lvat/rng.hpp"
#include "lvat/vae.hpp"

using lvat::Tensor;
using lvat::VaeConfig;

namespace {

VaeConfig small_cfg(lvat::ReconLoss recon) {
  VaeConfig cfg;
  cfg.input_dim = 3;
  cfg.latent_dim = 2;
  cfg.enc_hidden = {4};
  cfg.dec_hidden = {4};
  cfg.recon = recon;
  return cfg;
}

void zero_params(lvat::ParamSet& params) {
  for (auto& [name, t] : params) {
    (void)name;
    for (double& v : t.values) v = 0.0;
  }
}

}  // namespace

TEST_CASE("construction and validation") {
  VaeConfig cfg = small_cfg(lvat::ReconLoss::Gaussian);
  lvat::VaeModel m = lvat::make_vae(cfg, 5);
  CHECK(m.params.has("vae/enc/layer0/W"));
  CHECK(m.params.has("vae/mu/layer0/W"));
  CHECK(m.params.has("vae/logvar/layer0/W"));
  CHECK(m.params.has("vae/dec/layer1/W"));
  CHECK(m.params.at("vae/mu/layer0/W").shape == lvat::Shape{4, 2});

  lvat::VaeModel again = lvat::make_vae(cfg, 5);
  CHECK(again.params.at("vae/dec/layer0/W").values == m.params.at("vae/dec/layer0/W").values);

  VaeConfig bad = cfg;
  bad.latent_dim = 0;
  CHECK_THROWS_AS(lvat::make_vae(bad, 1), std::invalid_argument);
  bad.latent_dim = 4;  // larger than input_dim
  CHECK_THROWS_AS(lvat::make_vae(bad, 1), std::invalid_argument);
}

TEST_CASE("zeroed bernoulli vae hits the closed-form loss") {
  // All-zero parameters emit zero logits whatever the latent draw, and the
  // posterior collapses onto the prior. On x = 0.5 the per-pixel nll is ln 2,
  // so the total is exactly D * ln 2 and the kl term vanishes.
  VaeConfig cfg = small_cfg(lvat::ReconLoss::Bernoulli);
  lvat::VaeModel m = lvat::make_vae(cfg, 1);
  zero_params(m.params);
  Tensor x = Tensor::full({5, 3}, 0.5);
  lvat::SplitMix64 rng(3);
  const lvat::VaeLoss loss = lvat::vae_loss(cfg, m.params, x, rng);
  CHECK(std::abs(loss.kl.item()) < 1e-15);
  CHECK(std::abs(loss.recon.item() - 3.0 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(loss.total.item() - 3.0 * std::log(2.0)) < 1e-12);
}

TEST_CASE("zeroed gaussian vae reduces to half squared norm") {
  VaeConfig cfg = small_cfg(lvat::ReconLoss::Gaussian);
  lvat::VaeModel m = lvat::make_vae(cfg, 1);
  zero_params(m.params);
  Tensor x = Tensor::from({1.0, -2.0, 2.0, 0.0, 3.0, -1.0}, {2, 3});
  lvat::SplitMix64 rng(3);
  const lvat::VaeLoss loss = lvat::vae_loss(cfg, m.params, x, rng);
  // Mean over the batch of 0.5 * |x|^2: 0.5 * (9 + 10) / 2.
  CHECK(loss.recon.item() == doctest::Approx(4.75).epsilon(1e-12));
  CHECK(loss.kl.item() == doctest::Approx(0.0));
}

TEST_CASE("encoder statistics and the reparameterized sample") {
  VaeConfig cfg = small_cfg(lvat::ReconLoss::Gaussian);
  lvat::VaeModel m = lvat::make_vae(cfg, 17);
  lvat::SplitMix64 data_rng(4);
  Tensor x = Tensor::zeros({6, 3});
  for (double& v : x.values) v = data_rng.normal();

  const lvat::VaeEncoding enc = lvat::vae_encode_stats(cfg, m.params, x);
  CHECK(enc.mu.shape == lvat::Shape{6, 2});
  CHECK(enc.log_var.shape == lvat::Shape{6, 2});
  for (const double v : enc.log_var.values) {
    CHECK(v >= -10.0);
    CHECK(v <= 10.0);
  }

  const Tensor mu = lvat::vae_encode_deterministic(cfg, m.params, x);
  CHECK(mu.values == enc.mu.values);

  lvat::SplitMix64 r1(9), r2(9), r3(10);
  const Tensor z1 = lvat::vae_encode(cfg, m.params, x, r1);
  const Tensor z2 = lvat::vae_encode(cfg, m.params, x, r2);
  const Tensor z3 = lvat::vae_encode(cfg, m.params, x, r3);
  CHECK(z1.values == z2.values);   // same stream, same sample
  CHECK(z1.values != z3.values);   // fresh stream moves the draw
  CHECK(z1.values != mu.values);   // noise actually enters
}

TEST_CASE("decode ranges follow the likelihood") {
  VaeConfig bern = small_cfg(lvat::ReconLoss::Bernoulli);
  lvat::VaeModel mb = lvat::make_vae(bern, 21);
  Tensor z = Tensor::from({2.0, -1.5, 0.3, 0.9}, {2, 2});
  const Tensor probs = lvat::vae_decode(bern, mb.params, z);
  for (const double v : probs.values) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  VaeConfig gauss = small_cfg(lvat::ReconLoss::Gaussian);
  lvat::VaeModel mg = lvat::make_vae(gauss, 21);
  const Tensor raw = lvat::vae_decode(gauss, mg.params, z);
  const Tensor logits = lvat::vae_decode_logits(gauss, mg.params, z);
  CHECK(raw.values == logits.values);
}

TEST_CASE("loss gradients match finite differences with frozen noise") {
  for (const auto recon : {lvat::ReconLoss::Bernoulli, lvat::ReconLoss::Gaussian}) {
    CAPTURE(static_cast<int>(recon));
    VaeConfig cfg = small_cfg(recon);
    lvat::VaeModel m = lvat::make_vae(cfg, 33);

    std::vector<std::string> names;
    std::vector<Tensor> inputs;
    lvat::SplitMix64 data_rng(8);
    Tensor x = Tensor::zeros({4, 3});
    for (double& v : x.values) {
      v = recon == lvat::ReconLoss::Bernoulli ? data_rng.uniform() : data_rng.normal();
    }
    inputs.push_back(x);
    for (const auto& [name, t] : m.params) {
      names.push_back(name);
      inputs.push_back(t);
    }

    auto graph = [&](lvat::Tape& tape, const std::vector<Tensor>& in) {
      lvat::ParamSet live;
      for (std::size_t i = 0; i < names.size(); ++i) live.set(names[i], in[i + 1]);
      // Re-seeding per evaluation freezes the latent noise across the
      // finite-difference probes.
      lvat::SplitMix64 noise(99);
      (void)tape;
      return lvat::vae_loss(cfg, live, in[0], noise).total;
    };
    const fd::Report report = fd::check(graph, inputs);
    CHECK(report.checked == 12 + m.params.total_elements());
    CHECK(report.max_rel_err < 1e-5);
  }
}

TEST_CASE("gradient steps shrink the deterministic reconstruction") {
  lvat::Dataset ds = lvat::gen_two_moons(64, 0.05, 9);
  const lvat::Standardizer st = lvat::fit_standardizer(ds);
  lvat::apply_standardizer(st, ds);

  VaeConfig cfg;
  cfg.input_dim = 2;
  cfg.latent_dim = 2;
  cfg.enc_hidden = {16};
  cfg.dec_hidden = {16};
  cfg.recon = lvat::ReconLoss::Gaussian;
  lvat::VaeModel m = lvat::make_vae(cfg, 2);

  auto recon_mse = [&](const lvat::ParamSet& p) {
    const Tensor z = lvat::vae_encode_deterministic(cfg, p, ds.features);
    const Tensor xh = lvat::vae_decode(cfg, p, z);
    double s = 0.0;
    for (std::size_t i = 0; i < xh.values.size(); ++i) {
      const double d = ds.features.values[i] - xh.values[i];
      s += d * d;
    }
    return s / static_cast<double>(ds.size());
  };

  const double before = recon_mse(m.params);
  lvat::SplitMix64 noise(71);
  for (int step = 0; step < 150; ++step) {
    lvat::Tape tape;
    lvat::ParamSet live = m.params.recorded(tape);
    const lvat::VaeLoss loss = lvat::vae_loss(cfg, live, ds.features, noise);
    tape.backward(loss.total);
    for (auto& [name, t] : m.params) {
      const Tensor g = tape.grad(live.at(name));
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= 0.05 * g.values[i];
    }
  }
  CHECK(recon_mse(m.params) < 0.8 * before);
}
