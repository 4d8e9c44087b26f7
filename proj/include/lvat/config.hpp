#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lvat/classifier.hpp"
#include "lvat/dataio.hpp"
#include "lvat/flow.hpp"
#include "lvat/trainer.hpp"
#include "lvat/vae.hpp"

namespace lvat {

// Dataset section of a run config. The generation seed lives here, not in the
// run seeds: all seeds of a run share one dataset and differ only in which
// labels are exposed and in the training randomness.
struct DataConfig {
  std::string kind = "two_moons";  // two_moons | circles | grid_patterns
  std::size_t n_train = 1000;
  std::size_t n_test = 1000;
  double noise_sigma = 0.1;
  std::size_t grid_size = 8;     // grid_patterns only
  std::size_t grid_classes = 4;  // grid_patterns only
  std::size_t n_labeled = 10;
  std::uint64_t seed = 1;
  AugmentConfig augment;

  bool is_grid() const { return kind == "grid_patterns"; }
  std::size_t input_dim() const { return is_grid() ? grid_size * grid_size : 2; }
  std::size_t num_classes() const { return is_grid() ? grid_classes : 2; }

  void validate() const;
};

// Which generative model backs the latent space and how it is pre-trained.
// The vae/flow field groups are flattened into one JSON section because the
// kind selects exactly one of them.
struct TransformerConfig {
  std::string kind = "none";  // none | vae | flow
  std::size_t latent_dim = 2;
  std::vector<std::size_t> enc_hidden = {64, 64};
  std::vector<std::size_t> dec_hidden = {64, 64};
  std::string recon = "gaussian";  // gaussian | bernoulli
  std::size_t couplings = 6;
  std::vector<std::size_t> cond_hidden = {64, 64};
  double scale_cap = 2.0;
  TransformerTrainConfig train;

  void validate() const;
};

struct ClassifierSection {
  std::vector<std::size_t> hidden = {100, 100};
  double leaky_slope = 0.1;
};

struct RegularizerConfig {
  std::string kind = "none";  // none | vat | lvat-vae | lvat-flow | pi
  double epsilon = 1.0;
  double xi = 1e-6;
  int power_iters = 1;
  double sigma = 0.1;  // pi corruption scale

  void validate() const;
};

struct RunConfig {
  DataConfig data;
  TransformerConfig transformer;
  ClassifierSection classifier;
  RegularizerConfig regularizer;
  TrainConfig trainer;  // kind/perturb/pi are resolved from `regularizer`
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds = {1};

  void validate() const;
};

// Strict JSON round trip: every section and key is optional (defaults apply)
// but unknown keys anywhere are rejected with their path named.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// Applies one "dotted.path=value" override onto the JSON document before
// parsing; the value is read as JSON when possible, else as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// FNV-1a over the canonical serialization minus output_dir, printed as 16 hex
// digits. Any semantic change to the experiment changes the hash; where the
// results land does not.
std::string config_hash(const RunConfig& cfg);

// Resolved model/trainer sections. input_dim and num_classes follow from the
// data section; the regularizer section is folded into the train config.
ClassifierConfig build_classifier_config(const RunConfig& cfg);
VaeConfig build_vae_config(const RunConfig& cfg);
FlowConfig build_flow_config(const RunConfig& cfg);
TrainConfig build_train_config(const RunConfig& cfg);

// Train/test generation plus preprocessing: point data is standardized with
// train-split statistics, grid data stays in [0, 1]. The labeled subset is
// drawn per run seed.
struct BuiltData {
  Dataset train;
  Dataset test;
};
BuiltData build_datasets(const DataConfig& cfg, std::uint64_t run_seed);

// Fresh draw of n samples from the same generator, preprocessed exactly like
// the training data (train-split statistics for point data). Used to probe a
// trained model on inputs it never saw.
Dataset build_sample_pool(const DataConfig& cfg, std::size_t n, std::uint64_t seed);

}  // namespace lvat
