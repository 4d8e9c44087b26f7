#include "lvat/classifier.hpp"

#include <stdexcept>

namespace lvat {

MlpConfig ClassifierConfig::mlp() const {
  if (input_dim == 0) throw std::invalid_argument("classifier: input_dim must be positive");
  if (num_classes < 2) throw std::invalid_argument("classifier: need at least 2 classes");
  MlpConfig cfg;
  cfg.dims.push_back(input_dim);
  for (const std::size_t h : hidden) cfg.dims.push_back(h);
  cfg.dims.push_back(static_cast<std::size_t>(num_classes));
  cfg.output_activation = Activation::None;
  cfg.leaky_slope = leaky_slope;
  return cfg;
}

ClassifierModel make_classifier(const ClassifierConfig& cfg, std::uint64_t seed) {
  ClassifierModel m;
  m.config = cfg;
  m.params = init_mlp_params(cfg.mlp(), "cls/", seed);
  return m;
}

Tensor classifier_logits(const ClassifierConfig& cfg, const ParamSet& params, const Tensor& x) {
  return mlp_forward(cfg.mlp(), params, "cls/", x);
}

std::vector<int> predict_labels(const ClassifierModel& m, const Tensor& x) {
  const Tensor logits = classifier_logits(m.config, m.params, x);
  const std::size_t n = logits.shape[0];
  const std::size_t k = logits.shape[1];
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits.values[i * k + j] > logits.values[i * k + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double error_rate(const ClassifierModel& m, const Dataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("error_rate: empty dataset");
  if (!ds.has_labels()) throw std::invalid_argument("error_rate: dataset has no labels");
  const std::vector<int> pred = predict_labels(m, ds.features);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != ds.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

nlohmann::json classifier_header(const ClassifierConfig& cfg) {
  nlohmann::json h;
  h["kind"] = "classifier";
  h["input_dim"] = cfg.input_dim;
  h["hidden"] = cfg.hidden;
  h["num_classes"] = cfg.num_classes;
  h["leaky_slope"] = cfg.leaky_slope;
  return h;
}

ClassifierConfig classifier_config_from_header(const nlohmann::json& header) {
  if (header.value("kind", std::string()) != "classifier") {
    throw std::runtime_error("checkpoint header is not a classifier");
  }
  ClassifierConfig cfg;
  cfg.input_dim = header.at("input_dim").get<std::size_t>();
  cfg.hidden = header.at("hidden").get<std::vector<std::size_t>>();
  cfg.num_classes = header.at("num_classes").get<int>();
  cfg.leaky_slope = header.at("leaky_slope").get<double>();
  return cfg;
}

}  // namespace lvat
