#include "lvat/config.hpp"

#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "lvat/rng.hpp"

namespace lvat {

namespace {

using nlohmann::json;

std::string join_path(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) {
    throw std::invalid_argument("config: '" + where + "' must be a JSON object");
  }
}

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) {
      throw std::invalid_argument("config: unknown key '" + join_path(where, item.key()) + "'");
    }
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value for '" + join_path(where, key) + "'");
  }
}

AugmentConfig augment_from_json(const json& j, const std::string& where) {
  expect_object(j, where);
  reject_unknown(j, where, {"max_translate", "hflip"});
  AugmentConfig cfg;
  read_into(j, "max_translate", cfg.max_translate, where);
  read_into(j, "hflip", cfg.hflip, where);
  return cfg;
}

DataConfig data_from_json(const json& j) {
  const std::string where = "data";
  expect_object(j, where);
  reject_unknown(j, where,
                 {"kind", "n_train", "n_test", "noise_sigma", "grid_size", "grid_classes",
                  "n_labeled", "seed", "augment"});
  DataConfig cfg;
  read_into(j, "kind", cfg.kind, where);
  read_into(j, "n_train", cfg.n_train, where);
  read_into(j, "n_test", cfg.n_test, where);
  read_into(j, "noise_sigma", cfg.noise_sigma, where);
  read_into(j, "grid_size", cfg.grid_size, where);
  read_into(j, "grid_classes", cfg.grid_classes, where);
  read_into(j, "n_labeled", cfg.n_labeled, where);
  read_into(j, "seed", cfg.seed, where);
  if (j.contains("augment")) cfg.augment = augment_from_json(j.at("augment"), "data.augment");
  return cfg;
}

TransformerTrainConfig transformer_train_from_json(const json& j) {
  const std::string where = "transformer.train";
  expect_object(j, where);
  reject_unknown(j, where, {"lr0", "total_updates", "decay_updates", "batch", "holdout_frac"});
  TransformerTrainConfig cfg;
  read_into(j, "lr0", cfg.lr0, where);
  read_into(j, "total_updates", cfg.total_updates, where);
  read_into(j, "decay_updates", cfg.decay_updates, where);
  read_into(j, "batch", cfg.batch, where);
  read_into(j, "holdout_frac", cfg.holdout_frac, where);
  return cfg;
}

TransformerConfig transformer_from_json(const json& j) {
  const std::string where = "transformer";
  expect_object(j, where);
  reject_unknown(j, where,
                 {"kind", "latent_dim", "enc_hidden", "dec_hidden", "recon", "couplings",
                  "cond_hidden", "scale_cap", "train"});
  TransformerConfig cfg;
  read_into(j, "kind", cfg.kind, where);
  read_into(j, "latent_dim", cfg.latent_dim, where);
  read_into(j, "enc_hidden", cfg.enc_hidden, where);
  read_into(j, "dec_hidden", cfg.dec_hidden, where);
  read_into(j, "recon", cfg.recon, where);
  read_into(j, "couplings", cfg.couplings, where);
  read_into(j, "cond_hidden", cfg.cond_hidden, where);
  read_into(j, "scale_cap", cfg.scale_cap, where);
  if (j.contains("train")) cfg.train = transformer_train_from_json(j.at("train"));
  return cfg;
}

ClassifierSection classifier_from_json(const json& j) {
  const std::string where = "classifier";
  expect_object(j, where);
  reject_unknown(j, where, {"hidden", "leaky_slope"});
  ClassifierSection cfg;
  read_into(j, "hidden", cfg.hidden, where);
  read_into(j, "leaky_slope", cfg.leaky_slope, where);
  return cfg;
}

RegularizerConfig regularizer_from_json(const json& j) {
  const std::string where = "regularizer";
  expect_object(j, where);
  reject_unknown(j, where, {"kind", "epsilon", "xi", "power_iters", "sigma"});
  RegularizerConfig cfg;
  read_into(j, "kind", cfg.kind, where);
  read_into(j, "epsilon", cfg.epsilon, where);
  read_into(j, "xi", cfg.xi, where);
  read_into(j, "power_iters", cfg.power_iters, where);
  read_into(j, "sigma", cfg.sigma, where);
  return cfg;
}

TrainConfig trainer_from_json(const json& j) {
  const std::string where = "trainer";
  expect_object(j, where);
  reject_unknown(j, where,
                 {"alpha", "lr0", "total_updates", "decay_updates", "batch_labeled",
                  "batch_unlabeled", "eval_every"});
  TrainConfig cfg;
  read_into(j, "alpha", cfg.alpha, where);
  read_into(j, "lr0", cfg.lr0, where);
  read_into(j, "total_updates", cfg.total_updates, where);
  read_into(j, "decay_updates", cfg.decay_updates, where);
  read_into(j, "batch_labeled", cfg.batch_labeled, where);
  read_into(j, "batch_unlabeled", cfg.batch_unlabeled, where);
  read_into(j, "eval_every", cfg.eval_every, where);
  return cfg;
}

}  // namespace

void DataConfig::validate() const {
  if (kind != "two_moons" && kind != "circles" && kind != "grid_patterns") {
    throw std::invalid_argument("config: data.kind '" + kind +
                                "' is not one of two_moons, circles, grid_patterns");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("config: data.noise_sigma must be >= 0");
  if (n_train < 2 || n_test < 1) {
    throw std::invalid_argument("config: data.n_train/n_test too small");
  }
  if (n_labeled < 1 || n_labeled > n_train) {
    throw std::invalid_argument("config: data.n_labeled must lie in [1, n_train]");
  }
  if (is_grid()) {
    if (grid_size < 4) throw std::invalid_argument("config: data.grid_size must be >= 4");
    if (grid_classes < 2 || grid_classes > 8) {
      throw std::invalid_argument("config: data.grid_classes must lie in [2, 8]");
    }
  } else if (augment.enabled()) {
    throw std::invalid_argument("config: data.augment needs grid_patterns data");
  }
}

void TransformerConfig::validate() const {
  if (kind != "none" && kind != "vae" && kind != "flow") {
    throw std::invalid_argument("config: transformer.kind '" + kind +
                                "' is not one of none, vae, flow");
  }
  if (recon != "gaussian" && recon != "bernoulli") {
    throw std::invalid_argument("config: transformer.recon '" + recon +
                                "' is not gaussian or bernoulli");
  }
  train.validate();
}

void RegularizerConfig::validate() const {
  reg_kind_from_string(kind);  // throws on unknown kinds
  if (!(epsilon > 0.0)) throw std::invalid_argument("config: regularizer.epsilon must be > 0");
  if (!(xi > 0.0)) throw std::invalid_argument("config: regularizer.xi must be > 0");
  if (power_iters < 1) throw std::invalid_argument("config: regularizer.power_iters must be >= 1");
  if (sigma < 0.0) throw std::invalid_argument("config: regularizer.sigma must be >= 0");
}

void RunConfig::validate() const {
  data.validate();
  transformer.validate();
  regularizer.validate();
  const RegKind kind = reg_kind_from_string(regularizer.kind);
  if (kind == RegKind::LvatVae && transformer.kind != "vae") {
    throw std::invalid_argument("config: regularizer lvat-vae needs transformer.kind = vae");
  }
  if (kind == RegKind::LvatFlow && transformer.kind != "flow") {
    throw std::invalid_argument("config: regularizer lvat-flow needs transformer.kind = flow");
  }
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (output_dir.empty()) throw std::invalid_argument("config: output_dir must not be empty");
  build_train_config(*this);  // validates the resolved trainer section
}

RunConfig run_config_from_json(const json& j) {
  expect_object(j, "<root>");
  reject_unknown(j, "",
                 {"data", "transformer", "classifier", "regularizer", "trainer", "output_dir",
                  "seeds"});
  RunConfig cfg;
  if (j.contains("data")) cfg.data = data_from_json(j.at("data"));
  if (j.contains("transformer")) cfg.transformer = transformer_from_json(j.at("transformer"));
  if (j.contains("classifier")) cfg.classifier = classifier_from_json(j.at("classifier"));
  if (j.contains("regularizer")) cfg.regularizer = regularizer_from_json(j.at("regularizer"));
  if (j.contains("trainer")) cfg.trainer = trainer_from_json(j.at("trainer"));
  read_into(j, "output_dir", cfg.output_dir, "");
  read_into(j, "seeds", cfg.seeds, "");
  cfg.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["data"] = {{"kind", cfg.data.kind},
               {"n_train", cfg.data.n_train},
               {"n_test", cfg.data.n_test},
               {"noise_sigma", cfg.data.noise_sigma},
               {"grid_size", cfg.data.grid_size},
               {"grid_classes", cfg.data.grid_classes},
               {"n_labeled", cfg.data.n_labeled},
               {"seed", cfg.data.seed},
               {"augment",
                {{"max_translate", cfg.data.augment.max_translate},
                 {"hflip", cfg.data.augment.hflip}}}};
  j["transformer"] = {{"kind", cfg.transformer.kind},
                      {"latent_dim", cfg.transformer.latent_dim},
                      {"enc_hidden", cfg.transformer.enc_hidden},
                      {"dec_hidden", cfg.transformer.dec_hidden},
                      {"recon", cfg.transformer.recon},
                      {"couplings", cfg.transformer.couplings},
                      {"cond_hidden", cfg.transformer.cond_hidden},
                      {"scale_cap", cfg.transformer.scale_cap},
                      {"train",
                       {{"lr0", cfg.transformer.train.lr0},
                        {"total_updates", cfg.transformer.train.total_updates},
                        {"decay_updates", cfg.transformer.train.decay_updates},
                        {"batch", cfg.transformer.train.batch},
                        {"holdout_frac", cfg.transformer.train.holdout_frac}}}};
  j["classifier"] = {{"hidden", cfg.classifier.hidden},
                     {"leaky_slope", cfg.classifier.leaky_slope}};
  j["regularizer"] = {{"kind", cfg.regularizer.kind},
                      {"epsilon", cfg.regularizer.epsilon},
                      {"xi", cfg.regularizer.xi},
                      {"power_iters", cfg.regularizer.power_iters},
                      {"sigma", cfg.regularizer.sigma}};
  j["trainer"] = {{"alpha", cfg.trainer.alpha},
                  {"lr0", cfg.trainer.lr0},
                  {"total_updates", cfg.trainer.total_updates},
                  {"decay_updates", cfg.trainer.decay_updates},
                  {"batch_labeled", cfg.trainer.batch_labeled},
                  {"batch_unlabeled", cfg.trainer.batch_unlabeled},
                  {"eval_every", cfg.trainer.eval_every}};
  j["output_dir"] = cfg.output_dir;
  j["seeds"] = cfg.seeds;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("--set expects dotted.path=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // unquoted strings arrive verbatim

  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key =
        path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) {
      throw std::invalid_argument("--set path '" + path + "' has an empty segment");
    }
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    json& next = (*cur)[key];
    if (!next.is_object() && !next.is_null()) {
      throw std::invalid_argument("--set path '" + path + "' descends into a non-object");
    }
    cur = &next;
    start = dot + 1;
  }
}

std::string config_hash(const RunConfig& cfg) {
  // output_dir names where results land, not what the experiment is, so the
  // same run written to two directories hashes identically.
  json j = run_config_to_json(cfg);
  j.erase("output_dir");
  const std::uint64_t h = fnv1a64(j.dump());
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

ClassifierConfig build_classifier_config(const RunConfig& cfg) {
  ClassifierConfig c;
  c.input_dim = cfg.data.input_dim();
  c.num_classes = cfg.data.num_classes();
  c.hidden = cfg.classifier.hidden;
  c.leaky_slope = cfg.classifier.leaky_slope;
  return c;
}

VaeConfig build_vae_config(const RunConfig& cfg) {
  VaeConfig v;
  v.input_dim = cfg.data.input_dim();
  v.latent_dim = cfg.transformer.latent_dim;
  v.enc_hidden = cfg.transformer.enc_hidden;
  v.dec_hidden = cfg.transformer.dec_hidden;
  v.recon = cfg.transformer.recon == "bernoulli" ? ReconLoss::Bernoulli : ReconLoss::Gaussian;
  v.validate();
  return v;
}

FlowConfig build_flow_config(const RunConfig& cfg) {
  FlowConfig f;
  f.input_dim = cfg.data.input_dim();
  f.couplings = cfg.transformer.couplings;
  f.cond_hidden = cfg.transformer.cond_hidden;
  f.scale_cap = cfg.transformer.scale_cap;
  f.validate();
  return f;
}

TrainConfig build_train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.trainer;
  t.kind = reg_kind_from_string(cfg.regularizer.kind);
  t.perturb.epsilon = cfg.regularizer.epsilon;
  t.perturb.xi = cfg.regularizer.xi;
  t.perturb.power_iters = cfg.regularizer.power_iters;
  t.perturb.space = is_lvat(t.kind) ? PerturbSpace::Latent : PerturbSpace::Input;
  t.pi.sigma = cfg.regularizer.sigma;
  t.validate();
  return t;
}

namespace {

Dataset generate_split(const DataConfig& cfg, std::size_t n, std::uint64_t seed) {
  if (cfg.kind == "two_moons") return gen_two_moons(n, cfg.noise_sigma, seed);
  if (cfg.kind == "circles") return gen_circles(n, cfg.noise_sigma, seed);
  return gen_grid_patterns(n, cfg.grid_size, seed, cfg.grid_classes, cfg.noise_sigma);
}

}  // namespace

BuiltData build_datasets(const DataConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  BuiltData d;
  d.train = generate_split(cfg, cfg.n_train, derive_seed(cfg.seed, "data/train"));
  d.test = generate_split(cfg, cfg.n_test, derive_seed(cfg.seed, "data/test"));
  d.test.split = Dataset::Split::Test;

  if (!d.train.is_grid()) {
    const Standardizer st = fit_standardizer(d.train);
    apply_standardizer(st, d.train);
    apply_standardizer(st, d.test);
  }
  d.train = subsample_labels(d.train, cfg.n_labeled, derive_seed(run_seed, "labels"));
  return d;
}

Dataset build_sample_pool(const DataConfig& cfg, std::size_t n, std::uint64_t seed) {
  cfg.validate();
  Dataset pool = generate_split(cfg, n, seed);
  if (!pool.is_grid()) {
    const Dataset train = generate_split(cfg, cfg.n_train, derive_seed(cfg.seed, "data/train"));
    apply_standardizer(fit_standardizer(train), pool);
  }
  return pool;
}

}  // namespace lvat
