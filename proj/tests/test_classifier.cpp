#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lvat/classifier.hpp"
#include "lvat/rng.hpp"

using lvat::ClassifierConfig;
using lvat::Tensor;

TEST_CASE("construction and shapes") {
  ClassifierConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = {8, 8};
  cfg.num_classes = 4;
  lvat::ClassifierModel m = lvat::make_classifier(cfg, 1);
  CHECK(m.params.count() == 6);  // three layers, W and b each
  CHECK(m.params.at("cls/layer2/W").shape == lvat::Shape{8, 4});

  Tensor x = Tensor::zeros({5, 3});
  Tensor logits = lvat::classifier_logits(cfg, m.params, x);
  CHECK(logits.shape == lvat::Shape{5, 4});

  lvat::ClassifierModel again = lvat::make_classifier(cfg, 1);
  CHECK(again.params.at("cls/layer0/W").values == m.params.at("cls/layer0/W").values);

  ClassifierConfig bad = cfg;
  bad.num_classes = 1;
  CHECK_THROWS_AS(lvat::make_classifier(bad, 1), std::invalid_argument);
}

TEST_CASE("row permutation maps through the forward pass") {
  ClassifierConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {16};
  cfg.num_classes = 3;
  lvat::ClassifierModel m = lvat::make_classifier(cfg, 7);

  lvat::SplitMix64 rng(9);
  Tensor x = Tensor::zeros({6, 2});
  for (double& v : x.values) v = rng.normal();
  Tensor reversed = Tensor::zeros({6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      reversed.values[(5 - i) * 2 + j] = x.values[i * 2 + j];
    }
  }
  Tensor a = lvat::classifier_logits(cfg, m.params, x);
  Tensor b = lvat::classifier_logits(cfg, m.params, reversed);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(a.values[i * 3 + j] == b.values[(5 - i) * 3 + j]);
    }
  }
}

TEST_CASE("ties pick the lowest class index") {
  ClassifierConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {};
  cfg.num_classes = 3;
  lvat::ClassifierModel m = lvat::make_classifier(cfg, 1);
  // Zeroed single layer makes every logit identical.
  for (auto& [name, t] : m.params) {
    (void)name;
    for (double& v : t.values) v = 0.0;
  }
  Tensor x = Tensor::from({1, 2, -3, 4, 0, 0, 5, -5}, {4, 2});
  const std::vector<int> labels = lvat::predict_labels(m, x);
  for (const int label : labels) CHECK(label == 0);
}

TEST_CASE("error rate counts mismatches") {
  // Hand-built linear model: predicts class 1 when x0 > 0.
  ClassifierConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {};
  cfg.num_classes = 2;
  lvat::ClassifierModel m = lvat::make_classifier(cfg, 1);
  m.params.at("cls/layer0/W") = Tensor::from({0.0, 1.0, 0.0, 0.0}, {2, 2});
  m.params.at("cls/layer0/b") = Tensor::zeros({2});

  lvat::Dataset ds;
  ds.features = Tensor::from({1, 0, -1, 0, 2, 3, -2, 3}, {4, 2});
  ds.labels = {1, 0, 0, 0};  // third row is wrong on purpose
  ds.num_classes = 2;
  CHECK(lvat::error_rate(m, ds) == doctest::Approx(0.25));

  lvat::Dataset empty;
  CHECK_THROWS_AS(lvat::error_rate(m, empty), std::invalid_argument);
  lvat::Dataset unlabeled;
  unlabeled.features = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(lvat::error_rate(m, unlabeled), std::invalid_argument);
}

TEST_CASE("untrained classifiers hover near chance on balanced data") {
  lvat::Dataset ds = lvat::gen_two_moons(400, 0.1, 3);
  ClassifierConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {32, 32};
  cfg.num_classes = 2;
  double total = 0.0;
  const int trials = 20;
  for (int s = 0; s < trials; ++s) {
    lvat::ClassifierModel m = lvat::make_classifier(cfg, static_cast<std::uint64_t>(s + 100));
    total += lvat::error_rate(m, ds);
  }
  const double mean = total / trials;
  // Random Glorot nets on balanced two-class data stay within a wide band of 0.5.
  CHECK(mean > 0.2);
  CHECK(mean < 0.8);
}

TEST_CASE("header round trip") {
  ClassifierConfig cfg;
  cfg.input_dim = 64;
  cfg.hidden = {100, 50};
  cfg.num_classes = 8;
  cfg.leaky_slope = 0.2;
  const nlohmann::json h = lvat::classifier_header(cfg);
  const ClassifierConfig back = lvat::classifier_config_from_header(h);
  CHECK(back.input_dim == 64);
  CHECK(back.hidden == std::vector<std::size_t>{100, 50});
  CHECK(back.num_classes == 8);
  CHECK(back.leaky_slope == 0.2);
  nlohmann::json wrong = h;
  wrong["kind"] = "vae";
  CHECK_THROWS_AS(lvat::classifier_config_from_header(wrong), std::runtime_error);
}

TEST_CASE("recorded forward matches the value-only forward") {
  ClassifierConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {8};
  cfg.num_classes = 3;
  lvat::ClassifierModel m = lvat::make_classifier(cfg, 11);
  lvat::SplitMix64 rng(12);
  Tensor x = Tensor::zeros({4, 2});
  for (double& v : x.values) v = rng.normal();

  const Tensor plain = lvat::classifier_logits(cfg, m.params, x);
  lvat::Tape tape;
  const lvat::ParamSet rec = m.params.recorded(tape);
  const Tensor taped = lvat::classifier_logits(cfg, rec, tape.input(x));
  CHECK(taped.values == plain.values);
  CHECK(taped.recorded());

  // Gradients reach every parameter through the mean logit.
  Tensor loss = lvat::reduce_mean(taped);
  tape.backward(loss);
  for (const auto& [name, t] : rec) {
    double norm = 0.0;
    for (const double g : tape.grad(t).values) norm += std::abs(g);
    CAPTURE(name);
    CHECK(norm > 0.0);
  }
}
