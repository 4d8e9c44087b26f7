#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lvat/classifier.hpp"
#include "lvat/dataio.hpp"
#include "lvat/flow.hpp"
#include "lvat/nets.hpp"
#include "lvat/regularizer.hpp"
#include "lvat/vae.hpp"

namespace lvat {

// Adam moments, keyed like the ParamSet they track. The step counter drives
// bias correction; beta1 and the learning rate arrive per step from the
// schedule so the trainer can switch them mid-run.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  long step = 0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update, in place. Every parameter must have a
// matching gradient of the same shape.
void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr, double beta1);

// Consistency regularizer wired into the classifier loss.
enum class RegKind { None, Vat, LvatVae, LvatFlow, Pi };

RegKind reg_kind_from_string(const std::string& s);
std::string to_string(RegKind kind);
bool is_lvat(RegKind kind);

struct TrainConfig {
  double alpha = 1.0;          // weight of the consistency cost
  double lr0 = 0.001;
  long total_updates = 5000;
  long decay_updates = 1600;   // linear decay over this many final updates
  std::size_t batch_labeled = 32;
  std::size_t batch_unlabeled = 128;
  RegKind kind = RegKind::None;
  PerturbConfig perturb;       // vat / lvat settings
  PiConfig pi;                 // pi baseline settings
  long eval_every = 250;       // test error cadence in updates

  void validate() const;
};

struct LrBeta {
  double lr = 0.0;
  double beta1 = 0.9;
};

// Flat learning rate until the decay segment, then linear to zero at
// total_updates; beta1 drops from 0.9 to 0.5 when the decay starts. With
// decay_updates == 0 the schedule is flat throughout.
LrBeta lr_schedule(long step, const TrainConfig& cfg);

// Transformer pre-training (stage one of the curriculum).
struct TransformerTrainConfig {
  double lr0 = 0.001;
  long total_updates = 2000;
  long decay_updates = 600;
  std::size_t batch = 128;
  double holdout_frac = 0.1;   // slice reserved for the epoch history

  void validate() const;
};

struct TransformerTrainResult {
  std::vector<double> epoch_history;  // held-out loss after each epoch
  double initial_holdout = 0.0;
  double final_holdout = 0.0;
};

TransformerTrainResult train_vae(VaeModel& model, const Dataset& data,
                                 const TransformerTrainConfig& cfg, std::uint64_t seed);
TransformerTrainResult train_flow(FlowModel& model, const Dataset& data,
                                  const TransformerTrainConfig& cfg, std::uint64_t seed);

// Stage two: semi-supervised classifier training under L_sl + alpha * L_usl.
// Each update draws an independent labeled batch for the cross entropy and an
// unlabeled batch (all training inputs, labels stripped) for the consistency
// cost. The transformer is read-only throughout and must be present exactly
// when the regularizer is latent.
struct ClassifierTrainResult {
  std::vector<MetricsRow> metrics;  // one row per update
  double final_test_error = 0.0;
};

ClassifierTrainResult train_classifier(ClassifierModel& model, const Dataset& train,
                                       const Dataset& test, const Transformer* transformer,
                                       const TrainConfig& cfg, const AugmentConfig& aug,
                                       std::uint64_t seed);

}  // namespace lvat
