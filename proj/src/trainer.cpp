#include "lvat/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "lvat/rng.hpp"

namespace lvat {

namespace {

std::map<std::string, Tensor> collect_grads(const Tape& tape, const ParamSet& live) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, t] : live) grads.emplace(name, tape.grad(t));
  return grads;
}

void check_finite(double loss, long step, const char* what) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error(std::string(what) + " diverged at update " + std::to_string(step) +
                             " (loss is not finite)");
  }
}

// Deterministic train/holdout row split for the transformer history. The
// generators emit class-ordered rows, so a shuffled split keeps the holdout
// representative.
struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

HoldoutSplit split_rows(std::size_t n, double frac, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(seed);
  rng.shuffle(order);
  std::size_t hold = static_cast<std::size_t>(frac * static_cast<double>(n));
  if (hold >= n) hold = n - 1;
  HoldoutSplit split;
  split.holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(hold));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(hold), order.end());
  return split;
}

// Shared loop for both transformer kinds; `loss_fn` evaluates the training
// objective on a recorded parameter copy, `eval_fn` the plain holdout loss.
template <typename LossFn, typename EvalFn>
TransformerTrainResult transformer_loop(ParamSet& params, const Tensor& train_rows,
                                        const TransformerTrainConfig& cfg, std::uint64_t seed,
                                        LossFn&& loss_fn, EvalFn&& eval_fn) {
  TrainConfig sched;
  sched.lr0 = cfg.lr0;
  sched.total_updates = cfg.total_updates;
  sched.decay_updates = cfg.decay_updates;

  std::vector<std::size_t> idx(train_rows.shape[0]);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  BatchStream stream(idx, cfg.batch, derive_seed(seed, "transformer/batches"));

  TransformerTrainResult result;
  result.initial_holdout = eval_fn(params);

  AdamState adam;
  const std::size_t epoch_batches = stream.epoch_batches();
  for (long step = 0; step < cfg.total_updates; ++step) {
    const std::vector<std::size_t> batch = stream.next();
    const Tensor x = gather_rows(train_rows, batch);

    Tape tape;
    ParamSet live = params.recorded(tape);
    const Tensor loss = loss_fn(live, x, step);
    check_finite(loss.item(), step, "transformer training");
    tape.backward(loss);

    const LrBeta lb = lr_schedule(step, sched);
    adam_step(params, collect_grads(tape, live), adam, lb.lr, lb.beta1);

    const bool epoch_end = (static_cast<std::size_t>(step + 1) % epoch_batches) == 0;
    if (epoch_end || step + 1 == cfg.total_updates) {
      result.epoch_history.push_back(eval_fn(params));
    }
  }
  result.final_holdout = result.epoch_history.empty() ? result.initial_holdout
                                                      : result.epoch_history.back();
  return result;
}

}  // namespace

void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr, double beta1) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double m_corr = 1.0 - std::pow(beta1, t);
  const double v_corr = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam: missing gradient for " + name);
    const Tensor& g = it->second;
    if (g.shape != p.shape) {
      throw std::invalid_argument("adam: gradient shape " + shape_str(g.shape) +
                                  " does not match parameter " + name);
    }
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    if (m.values.empty()) m = Tensor::zeros(p.shape);
    if (v.values.empty()) v = Tensor::zeros(p.shape);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      m.values[i] = beta1 * m.values[i] + (1.0 - beta1) * g.values[i];
      v.values[i] = state.beta2 * v.values[i] + (1.0 - state.beta2) * g.values[i] * g.values[i];
      const double mhat = m.values[i] / m_corr;
      const double vhat = v.values[i] / v_corr;
      p.values[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

RegKind reg_kind_from_string(const std::string& s) {
  if (s == "none") return RegKind::None;
  if (s == "vat") return RegKind::Vat;
  if (s == "lvat-vae") return RegKind::LvatVae;
  if (s == "lvat-flow") return RegKind::LvatFlow;
  if (s == "pi") return RegKind::Pi;
  throw std::invalid_argument("unknown regularizer kind '" + s +
                              "' (expected none, vat, lvat-vae, lvat-flow or pi)");
}

std::string to_string(RegKind kind) {
  switch (kind) {
    case RegKind::None: return "none";
    case RegKind::Vat: return "vat";
    case RegKind::LvatVae: return "lvat-vae";
    case RegKind::LvatFlow: return "lvat-flow";
    case RegKind::Pi: return "pi";
  }
  throw std::logic_error("unreachable regularizer kind");
}

bool is_lvat(RegKind kind) { return kind == RegKind::LvatVae || kind == RegKind::LvatFlow; }

void TrainConfig::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("trainer: alpha must be nonnegative");
  if (!(lr0 > 0.0)) throw std::invalid_argument("trainer: lr0 must be positive");
  if (total_updates < 1) throw std::invalid_argument("trainer: total_updates must be positive");
  if (decay_updates < 0 || decay_updates > total_updates) {
    throw std::invalid_argument("trainer: decay_updates must lie in [0, total_updates]");
  }
  if (batch_labeled < 1 || batch_unlabeled < 1) {
    throw std::invalid_argument("trainer: batch sizes must be at least 1");
  }
  if (eval_every < 1) throw std::invalid_argument("trainer: eval_every must be at least 1");
}

LrBeta lr_schedule(long step, const TrainConfig& cfg) {
  cfg.validate();
  if (step < 0 || step > cfg.total_updates) {
    throw std::out_of_range("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(cfg.total_updates) + "]");
  }
  const long decay_start = cfg.total_updates - cfg.decay_updates;
  if (cfg.decay_updates == 0 || step < decay_start) return {cfg.lr0, 0.9};
  const double remaining = static_cast<double>(cfg.total_updates - step);
  return {cfg.lr0 * remaining / static_cast<double>(cfg.decay_updates), 0.5};
}

void TransformerTrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("transformer: lr0 must be positive");
  if (total_updates < 1) throw std::invalid_argument("transformer: total_updates must be positive");
  if (decay_updates < 0 || decay_updates > total_updates) {
    throw std::invalid_argument("transformer: decay_updates must lie in [0, total_updates]");
  }
  if (batch < 1) throw std::invalid_argument("transformer: batch must be at least 1");
  if (holdout_frac < 0.0 || holdout_frac >= 1.0) {
    throw std::invalid_argument("transformer: holdout_frac must lie in [0, 1)");
  }
}

TransformerTrainResult train_vae(VaeModel& model, const Dataset& data,
                                 const TransformerTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.size() < 2) throw std::invalid_argument("train_vae: need at least 2 samples");
  const HoldoutSplit split =
      split_rows(data.size(), cfg.holdout_frac, derive_seed(seed, "transformer/holdout"));
  const Tensor train_rows = gather_rows(data.features, split.train);
  const Tensor hold_rows = split.holdout.empty() ? train_rows
                                                 : gather_rows(data.features, split.holdout);

  SplitMix64 noise(derive_seed(seed, "vae/noise"));
  auto loss_fn = [&](ParamSet& live, const Tensor& x, long) {
    return vae_loss(model.config, live, x, noise).total;
  };
  auto eval_fn = [&](const ParamSet& params) {
    // Fixed noise stream for evaluation keeps the history comparable.
    SplitMix64 eval_noise(derive_seed(seed, "vae/eval-noise"));
    return vae_loss(model.config, params, hold_rows, eval_noise).total.item();
  };
  return transformer_loop(model.params, train_rows, cfg, seed, loss_fn, eval_fn);
}

TransformerTrainResult train_flow(FlowModel& model, const Dataset& data,
                                  const TransformerTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.size() < 2) throw std::invalid_argument("train_flow: need at least 2 samples");
  const HoldoutSplit split =
      split_rows(data.size(), cfg.holdout_frac, derive_seed(seed, "transformer/holdout"));
  const Tensor train_rows = gather_rows(data.features, split.train);
  const Tensor hold_rows = split.holdout.empty() ? train_rows
                                                 : gather_rows(data.features, split.holdout);

  auto loss_fn = [&](ParamSet& live, const Tensor& x, long) {
    return neg(flow_log_likelihood(model, live, x));
  };
  auto eval_fn = [&](const ParamSet& params) {
    return -flow_log_likelihood(model, params, hold_rows).item();
  };
  return transformer_loop(model.params, train_rows, cfg, seed, loss_fn, eval_fn);
}

ClassifierTrainResult train_classifier(ClassifierModel& model, const Dataset& train,
                                       const Dataset& test, const Transformer* transformer,
                                       const TrainConfig& cfg, const AugmentConfig& aug,
                                       std::uint64_t seed) {
  cfg.validate();
  if (train.labeled_indices().empty()) {
    throw std::invalid_argument("train_classifier: no labeled samples in the training set");
  }
  if (is_lvat(cfg.kind) && transformer == nullptr) {
    throw std::invalid_argument("train_classifier: " + to_string(cfg.kind) +
                                " needs a transformer");
  }
  if (!is_lvat(cfg.kind) && transformer != nullptr) {
    throw std::invalid_argument("train_classifier: " + to_string(cfg.kind) +
                                " does not use a transformer");
  }

  // The consistency term is active only when it can contribute; with
  // alpha = 0 the run must be bit-identical to a plain supervised one, which
  // is why every consumer below draws from its own derived seed stream.
  const bool use_reg = cfg.kind != RegKind::None && cfg.alpha > 0.0;

  BatchStream labeled = make_batches(train, cfg.batch_labeled,
                                     derive_seed(seed, "batches/labeled"), true);
  BatchStream unlabeled = make_batches(train, cfg.batch_unlabeled,
                                       derive_seed(seed, "batches/unlabeled"), false);
  SplitMix64 aug_labeled(derive_seed(seed, "aug/labeled"));
  SplitMix64 aug_unlabeled(derive_seed(seed, "aug/unlabeled"));
  const std::uint64_t reg_base = derive_seed(seed, "reg");

  ClassifierTrainResult result;
  result.metrics.reserve(static_cast<std::size_t>(cfg.total_updates));
  double test_error = error_rate(model, test);
  AdamState adam;

  for (long step = 0; step < cfg.total_updates; ++step) {
    const std::vector<std::size_t> lidx = labeled.next();
    const Tensor lx = augment(gather_rows(train.features, lidx), train.grid_h, train.grid_w, aug,
                              aug_labeled);
    const std::vector<int> ly = gather_labels(train.labels, lidx);

    Tape tape;
    ParamSet live = model.params.recorded(tape);
    const Tensor loss_sl = cross_entropy(classifier_logits(model.config, live, lx), ly);

    Tensor loss_total = loss_sl;
    double usl_value = 0.0;
    if (use_reg) {
      const Tensor ux = augment(gather_rows(train.features, unlabeled.next()), train.grid_h,
                                train.grid_w, aug, aug_unlabeled);
      const std::uint64_t reg_seed = derive_seed(reg_base, static_cast<std::uint64_t>(step));
      Tensor loss_usl;
      switch (cfg.kind) {
        case RegKind::Vat:
          loss_usl = vat_cost(model.config, live, ux, cfg.perturb, reg_seed).cost;
          break;
        case RegKind::LvatVae:
        case RegKind::LvatFlow:
          loss_usl = lvat_cost(model.config, live, *transformer, ux, cfg.perturb, reg_seed).cost;
          break;
        case RegKind::Pi:
          loss_usl = pi_cost(model.config, live, ux, cfg.pi, reg_seed);
          break;
        case RegKind::None:
          throw std::logic_error("unreachable regularizer dispatch");
      }
      usl_value = loss_usl.item();
      loss_total = add(loss_sl, loss_usl * cfg.alpha);
    }

    check_finite(loss_total.item(), step, "classifier training");
    tape.backward(loss_total);

    const LrBeta lb = lr_schedule(step, cfg);
    adam_step(model.params, collect_grads(tape, live), adam, lb.lr, lb.beta1);

    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_updates) {
      test_error = error_rate(model, test);
    }
    result.metrics.push_back({step + 1, lb.lr, loss_sl.item(), usl_value, loss_total.item(),
                              test_error});
  }
  result.final_test_error = test_error;
  return result;
}

}  // namespace lvat
