#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "lvat/dataio.hpp"
#include "lvat/nets.hpp"
#include "lvat/tensor.hpp"

namespace lvat {

// Dense softmax classifier. The logits head stays linear; losses apply
// log-softmax themselves so the probe KL sees unsquashed outputs.
struct ClassifierConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden = {100, 100};
  int num_classes = 2;
  double leaky_slope = 0.1;

  MlpConfig mlp() const;
};

struct ClassifierModel {
  ClassifierConfig config;
  ParamSet params;
};

ClassifierModel make_classifier(const ClassifierConfig& cfg, std::uint64_t seed);

// Forward to logits [B x K]. Pass model.params for a value-only evaluation or
// a tape-recorded copy when gradients are needed; mlp_forward picks up the
// tape from whichever tensors carry one.
Tensor classifier_logits(const ClassifierConfig& cfg, const ParamSet& params, const Tensor& x);

// Argmax per row; ties resolve to the lowest class index.
std::vector<int> predict_labels(const ClassifierModel& m, const Tensor& x);

// Fraction of mismatched labels over the whole dataset. Throws if the dataset
// is empty or carries no labels.
double error_rate(const ClassifierModel& m, const Dataset& ds);

// Checkpoint header round trip.
nlohmann::json classifier_header(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_header(const nlohmann::json& header);

}  // namespace lvat
