// Subcommand entry points for the laboratory. Every command is a pure
// function of its config and input files: reruns produce byte-identical
// artifacts. Exit codes: 0 success, 1 numerical failure (failed gradient
// audit, diverged training), 2 usage or input error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lvat/classifier.hpp"
#include "lvat/config.hpp"
#include "lvat/dataio.hpp"
#include "lvat/flow.hpp"
#include "lvat/gradcheck.hpp"
#include "lvat/regularizer.hpp"
#include "lvat/rng.hpp"
#include "lvat/tensor.hpp"
#include "lvat/trainer.hpp"
#include "lvat/vae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- logging (stderr only, so artifacts and stdout stay clean) ----

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* raw = std::getenv("LVAT_LOG");
    if (raw == nullptr) return LogLevel::Info;
    const std::string v(raw);
    if (v == "error") return LogLevel::Error;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (static_cast<int>(log_level()) >= static_cast<int>(LogLevel::Info)) {
    std::cerr << "[info] " << msg << "\n";
  }
}

void log_debug(const std::string& msg) {
  if (static_cast<int>(log_level()) >= static_cast<int>(LogLevel::Debug)) {
    std::cerr << "[debug] " << msg << "\n";
  }
}

// ---- shared plumbing ----

lvat::RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: '" + path + "' is not valid JSON: " +
                                std::string(e.what()));
  }
  for (const std::string& s : sets) lvat::apply_override(j, s);
  return lvat::run_config_from_json(j);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create output directory '" + dir.string() +
                             "': " + ec.message());
  }
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

// Owning storage behind the non-owning Transformer view.
struct TransformerBundle {
  std::optional<lvat::VaeModel> vae;
  std::optional<lvat::FlowModel> flow;

  lvat::Transformer view() const {
    return vae ? lvat::Transformer::from(*vae) : lvat::Transformer::from(*flow);
  }
};

TransformerBundle load_transformer(const std::string& path, lvat::RegKind kind,
                                   std::size_t input_dim) {
  const lvat::Checkpoint ck = lvat::load_checkpoint(path);
  const std::string stored = ck.header.value("kind", "<missing>");
  TransformerBundle bundle;
  if (kind == lvat::RegKind::LvatVae) {
    if (stored != "vae") {
      throw std::invalid_argument("checkpoint '" + path + "' holds kind '" + stored +
                                  "', lvat-vae needs a vae");
    }
    lvat::VaeModel m;
    m.config = lvat::vae_config_from_header(ck.header);
    m.params = ck.params;
    if (m.config.input_dim != input_dim) {
      throw std::invalid_argument("checkpoint '" + path + "' was trained for input_dim " +
                                  std::to_string(m.config.input_dim) + ", data has " +
                                  std::to_string(input_dim));
    }
    bundle.vae = std::move(m);
  } else {
    if (stored != "flow") {
      throw std::invalid_argument("checkpoint '" + path + "' holds kind '" + stored +
                                  "', lvat-flow needs a flow");
    }
    lvat::FlowModel m = lvat::flow_model_from_header(ck.header);
    m.params = ck.params;
    if (m.config.input_dim != input_dim) {
      throw std::invalid_argument("checkpoint '" + path + "' was trained for input_dim " +
                                  std::to_string(m.config.input_dim) + ", data has " +
                                  std::to_string(input_dim));
    }
    bundle.flow = std::move(m);
  }
  return bundle;
}

std::vector<double> row_l2(const lvat::Tensor& a, const lvat::Tensor& b) {
  const std::size_t rows = a.shape[0];
  const std::size_t cols = a.shape[1];
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = a.values[r * cols + c] - b.values[r * cols + c];
      acc += d * d;
    }
    out[r] = std::sqrt(acc);
  }
  return out;
}

// Per-sample KL(p || q) in nats from logits, value-only.
std::vector<double> row_kl(const lvat::Tensor& p_logits, const lvat::Tensor& q_logits) {
  const lvat::Tensor p = lvat::softmax(p_logits);
  const lvat::Tensor lp = lvat::log_softmax(p_logits);
  const lvat::Tensor lq = lvat::log_softmax(q_logits);
  return lvat::reduce_sum(lvat::mul(p, lvat::sub(lp, lq)), {1}).values;
}

// ---- gradcheck ----

int cmd_gradcheck(bool corrupt) {
  lvat::GradCheckOptions opts;
  opts.corrupt = corrupt;
  const std::vector<lvat::GradCheck> results = lvat::run_gradchecks(opts);

  std::printf("%-26s %13s %8s  %s\n", "op", "max_rel_err", "checked", "status");
  for (const lvat::GradCheck& r : results) {
    std::printf("%-26s %13.3e %8zu  %s\n", r.name.c_str(), r.max_rel_err, r.checked,
                r.passed ? "pass" : "FAIL");
  }
  std::printf("%zu ops audited, tolerance %.1e\n", results.size(), opts.tol);

  if (!lvat::all_passed(results)) {
    std::cerr << "gradcheck: FAILED, worst offender '" << lvat::worst_offender(results) << "'\n";
    return 1;
  }
  return 0;
}

// ---- train-transformer ----

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;  // overrides config output_dir when non-empty
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_train_transformer(const CommonArgs& args) {
  lvat::RunConfig cfg = load_config(args.config_path, args.sets);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (cfg.transformer.kind == "none") {
    throw std::invalid_argument("config: transformer.kind must be vae or flow to train one");
  }
  const std::uint64_t seed = args.seed_given ? args.seed : cfg.seeds.front();
  const lvat::BuiltData data = lvat::build_datasets(cfg.data, seed);
  ensure_dir(cfg.output_dir);

  log_info("training " + cfg.transformer.kind + " transformer, seed " + std::to_string(seed));
  lvat::TransformerTrainResult result;
  json header;
  lvat::ParamSet params;
  if (cfg.transformer.kind == "vae") {
    lvat::VaeModel m = lvat::make_vae(lvat::build_vae_config(cfg),
                                      lvat::derive_seed(seed, "transformer/init"));
    result = lvat::train_vae(m, data.train, cfg.transformer.train,
                             lvat::derive_seed(seed, "transformer/train"));
    header = lvat::vae_header(m.config);
    params = m.params;
  } else {
    lvat::FlowModel m = lvat::make_flow(lvat::build_flow_config(cfg),
                                        lvat::derive_seed(seed, "transformer/init"));
    result = lvat::train_flow(m, data.train, cfg.transformer.train,
                              lvat::derive_seed(seed, "transformer/train"));
    header = lvat::flow_header(m);
    params = m.params;
  }

  const fs::path out(cfg.output_dir);
  lvat::save_checkpoint((out / "transformer.json").string(), header, params);
  {
    std::ofstream csv = open_out(out / "transformer_history.csv");
    csv << "epoch,holdout_loss\n";
    csv << "0," << lvat::format_double(result.initial_holdout) << "\n";
    for (std::size_t i = 0; i < result.epoch_history.size(); ++i) {
      csv << i + 1 << "," << lvat::format_double(result.epoch_history[i]) << "\n";
    }
  }

  std::printf("transformer %s: holdout %s -> %s over %zu epochs\n", cfg.transformer.kind.c_str(),
              lvat::format_double(result.initial_holdout).c_str(),
              lvat::format_double(result.final_holdout).c_str(), result.epoch_history.size());
  return 0;
}

// ---- train-classifier ----

struct ClassifierArgs : CommonArgs {
  std::string transformer_path;  // defaults to <output_dir>/transformer.json
};

int cmd_train_classifier(const ClassifierArgs& args) {
  lvat::RunConfig cfg = load_config(args.config_path, args.sets);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  const lvat::TrainConfig tcfg = lvat::build_train_config(cfg);
  const lvat::ClassifierConfig ccfg = lvat::build_classifier_config(cfg);
  ensure_dir(cfg.output_dir);
  const fs::path out(cfg.output_dir);

  std::optional<TransformerBundle> bundle;
  if (lvat::is_lvat(tcfg.kind)) {
    const std::string tpath = args.transformer_path.empty()
                                  ? (out / "transformer.json").string()
                                  : args.transformer_path;
    bundle = load_transformer(tpath, tcfg.kind, ccfg.input_dim);
    log_debug("transformer loaded from " + tpath);
  }

  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (args.seed_given) seeds = {args.seed};

  json seed_rows = json::array();
  std::vector<double> finals;
  bool wrote_test = false;
  for (const std::uint64_t seed : seeds) {
    const lvat::BuiltData data = lvat::build_datasets(cfg.data, seed);
    if (!wrote_test) {
      // The test split is seed-independent; one copy serves every row.
      lvat::save_dataset_csv((out / "test.csv").string(), data.test);
      wrote_test = true;
    }

    lvat::ClassifierModel model =
        lvat::make_classifier(ccfg, lvat::derive_seed(seed, "classifier/init"));
    std::optional<lvat::Transformer> view;
    if (bundle) view.emplace(bundle->view());

    log_info("training classifier, seed " + std::to_string(seed));
    const lvat::ClassifierTrainResult result =
        lvat::train_classifier(model, data.train, data.test, view ? &*view : nullptr, tcfg,
                               cfg.data.augment, lvat::derive_seed(seed, "classifier/train"));

    const std::string metrics_name = "metrics_seed" + std::to_string(seed) + ".csv";
    const std::string ckpt_name = "classifier_seed" + std::to_string(seed) + ".json";
    lvat::save_metrics_csv((out / metrics_name).string(), result.metrics);
    lvat::save_checkpoint((out / ckpt_name).string(), lvat::classifier_header(ccfg),
                          model.params);
    seed_rows.push_back({{"seed", seed},
                         {"final_test_error", result.final_test_error},
                         {"metrics_csv", metrics_name},
                         {"checkpoint", ckpt_name}});
    finals.push_back(result.final_test_error);
    log_info("seed " + std::to_string(seed) +
             " final test error " + lvat::format_double(result.final_test_error));
  }

  double mean = 0.0;
  for (const double v : finals) mean += v;
  mean /= static_cast<double>(finals.size());
  double stddev = 0.0;
  if (finals.size() > 1) {
    double acc = 0.0;
    for (const double v : finals) acc += (v - mean) * (v - mean);
    stddev = std::sqrt(acc / static_cast<double>(finals.size() - 1));
  }

  json summary;
  summary["config_hash"] = lvat::config_hash(cfg);
  summary["regularizer"] = cfg.regularizer.kind;
  summary["alpha"] = tcfg.alpha;
  // Baseline means no consistency term contributed, either by kind or weight.
  summary["baseline"] = tcfg.kind == lvat::RegKind::None || tcfg.alpha == 0.0;
  summary["seeds"] = seed_rows;
  summary["mean_test_error"] = mean;
  summary["std_test_error"] = stddev;

  std::ofstream sj = open_out(out / "summary.json");
  sj << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---- gen-adv ----

struct GenAdvArgs : CommonArgs {
  std::string checkpoint;
  std::string transformer_path;
  std::size_t n = 5000;
  int bins = 0;
};

void write_histogram(const fs::path& p, const std::vector<double>& values, int bins) {
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double width = (*hi_it - lo) / static_cast<double>(bins);
  std::vector<long> counts(static_cast<std::size_t>(bins), 0);
  for (const double v : values) {
    // A zero-width range collapses into the first bin; the top edge joins the
    // last bin so every sample lands somewhere.
    long b = width > 0.0 ? static_cast<long>((v - lo) / width) : 0;
    if (b >= bins) b = bins - 1;
    ++counts[static_cast<std::size_t>(b)];
  }
  std::ofstream csv = open_out(p);
  csv << "bin_left,count\n";
  for (int i = 0; i < bins; ++i) {
    csv << lvat::format_double(lo + width * i) << "," << counts[static_cast<std::size_t>(i)]
        << "\n";
  }
}

int cmd_gen_adv(const GenAdvArgs& args) {
  lvat::RunConfig cfg = load_config(args.config_path, args.sets);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  const lvat::TrainConfig tcfg = lvat::build_train_config(cfg);
  if (tcfg.kind == lvat::RegKind::None || tcfg.kind == lvat::RegKind::Pi) {
    throw std::invalid_argument("gen-adv needs a vat or lvat-* regularizer, config has '" +
                                cfg.regularizer.kind + "'");
  }
  if (args.n == 0) throw std::invalid_argument("gen-adv: --n must be positive");
  ensure_dir(cfg.output_dir);
  const fs::path out(cfg.output_dir);

  const lvat::Checkpoint ck = lvat::load_checkpoint(args.checkpoint);
  const lvat::ClassifierConfig ccfg = lvat::classifier_config_from_header(ck.header);
  if (ccfg.input_dim != cfg.data.input_dim()) {
    throw std::invalid_argument("checkpoint '" + args.checkpoint + "' expects input_dim " +
                                std::to_string(ccfg.input_dim) + ", data has " +
                                std::to_string(cfg.data.input_dim()));
  }
  const lvat::ParamSet& cparams = ck.params;

  const bool latent = lvat::is_lvat(tcfg.kind);
  std::optional<TransformerBundle> bundle;
  std::optional<lvat::Transformer> view;
  if (latent) {
    const std::string tpath = args.transformer_path.empty()
                                  ? (out / "transformer.json").string()
                                  : args.transformer_path;
    bundle = load_transformer(tpath, tcfg.kind, ccfg.input_dim);
    view.emplace(bundle->view());
  }

  const std::uint64_t pool_seed = args.seed_given
                                      ? args.seed
                                      : lvat::derive_seed(cfg.data.seed, "gen-adv");
  const lvat::Dataset pool = lvat::build_sample_pool(cfg.data, args.n, pool_seed);
  log_info("generating adversarial perturbations for " + std::to_string(args.n) + " samples");

  std::ofstream csv = open_out(out / "adversarial.csv");
  if (latent) {
    csv << "sample_id,input_space_distance,latent_space_distance,reconstruction_distance,"
           "kl_cost\n";
  } else {
    csv << "sample_id,input_space_distance,kl_cost\n";
  }

  std::vector<double> all_distances;
  all_distances.reserve(args.n);
  const std::size_t batch = 256;
  for (std::size_t start = 0; start < args.n; start += batch) {
    const std::size_t stop = std::min(args.n, start + batch);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const lvat::Tensor x = lvat::gather_rows(pool.features, idx);
    const std::uint64_t plan_seed = lvat::derive_seed(lvat::derive_seed(pool_seed, "plan"), start);

    std::vector<double> dist, lat, recon, kl;
    if (latent) {
      const lvat::LvatPlan plan = lvat::lvat_plan(ccfg, cparams, *view, x, tcfg.perturb,
                                                  plan_seed);
      dist = row_l2(x, plan.x_adv);
      lat.assign(idx.size(), 0.0);
      const std::size_t d_z = plan.r.shape[1];
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d_z; ++c) {
          acc += plan.r.values[r * d_z + c] * plan.r.values[r * d_z + c];
        }
        lat[r] = std::sqrt(acc);
      }
      recon = row_l2(x, view->decode(view->encode(x)));
      kl = row_kl(plan.target_logits, lvat::classifier_logits(ccfg, cparams, plan.x_adv));
    } else {
      const lvat::VatPlan plan = lvat::vat_plan(ccfg, cparams, x, tcfg.perturb, plan_seed);
      const lvat::Tensor x_adv = lvat::add(x, plan.r);
      dist = row_l2(x, x_adv);
      kl = row_kl(plan.target_logits, lvat::classifier_logits(ccfg, cparams, x_adv));
    }

    for (std::size_t i = 0; i < idx.size(); ++i) {
      csv << start + i << "," << lvat::format_double(dist[i]);
      if (latent) {
        csv << "," << lvat::format_double(lat[i]) << "," << lvat::format_double(recon[i]);
      }
      csv << "," << lvat::format_double(kl[i]) << "\n";
      all_distances.push_back(dist[i]);
    }
    log_debug("batch " + std::to_string(start) + ".." + std::to_string(stop) + " done");
  }
  csv.close();

  if (args.bins > 0) {
    write_histogram(out / "adversarial_hist.csv", all_distances, args.bins);
  }

  double mean = 0.0;
  for (const double v : all_distances) mean += v;
  mean /= static_cast<double>(all_distances.size());
  double var = 0.0;
  for (const double v : all_distances) var += (v - mean) * (v - mean);
  var /= static_cast<double>(all_distances.size());
  const double cov = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  std::printf("gen-adv: %zu samples, mean input distance %s, cov %s\n", args.n,
              lvat::format_double(mean).c_str(), lvat::format_double(cov).c_str());
  return 0;
}

// ---- eval ----

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& out_file) {
  const lvat::Checkpoint ck = lvat::load_checkpoint(checkpoint);
  const lvat::ClassifierConfig ccfg = lvat::classifier_config_from_header(ck.header);
  const lvat::Dataset ds = lvat::load_dataset_csv(data_path);
  if (ds.size() == 0) throw std::invalid_argument("eval: '" + data_path + "' is empty");
  if (!ds.has_labels()) {
    throw std::invalid_argument("eval: '" + data_path + "' carries no labels");
  }

  lvat::ClassifierModel model{ccfg, ck.params};
  const std::vector<int> pred = lvat::predict_labels(model, ds.features);
  long errors = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != ds.labels[i]) ++errors;
  }
  const double rate = static_cast<double>(errors) / static_cast<double>(ds.size());

  json report;
  report["error_rate"] = rate;
  report["n"] = ds.size();
  report["errors"] = errors;
  std::cout << report.dump(2) << "\n";
  if (!out_file.empty()) {
    std::ofstream out = open_out(out_file);
    out << report.dump(2) << "\n";
  }
  return 0;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run config JSON")->required();
  cmd->add_option("--set", args.sets, "Override as dotted.path=value (repeatable)");
  cmd->add_option("--out", args.out_dir, "Override output_dir from the config");
  cmd->add_option("--seed", args.seed, "Use this single seed instead of the config list")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale laboratory for adversarial consistency training"};
  app.require_subcommand(1);

  bool corrupt = false;
  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "Audit every registered gradient against finite differences");
  gc->add_flag("--corrupt", corrupt, "Bias one analytic gradient; the audit must then fail");

  CommonArgs tt_args;
  CLI::App* tt = app.add_subcommand("train-transformer",
                                    "Pre-train the generative transformer from a run config");
  add_common(tt, tt_args);

  ClassifierArgs tc_args;
  CLI::App* tc = app.add_subcommand("train-classifier",
                                    "Train the classifier over the config's seed list");
  add_common(tc, tc_args);
  tc->add_option("--transformer", tc_args.transformer_path,
                 "Transformer checkpoint (default <output_dir>/transformer.json)");

  GenAdvArgs ga_args;
  CLI::App* ga = app.add_subcommand("gen-adv",
                                    "Emit per-sample adversarial perturbation distances");
  add_common(ga, ga_args);
  ga->add_option("--checkpoint", ga_args.checkpoint, "Trained classifier checkpoint")
      ->required();
  ga->add_option("--transformer", ga_args.transformer_path,
                 "Transformer checkpoint (default <output_dir>/transformer.json)");
  ga->add_option("--n", ga_args.n, "Number of samples");
  ga->add_option("--bins", ga_args.bins, "Also write a (bin_left, count) histogram CSV");

  std::string ev_checkpoint, ev_data, ev_out;
  CLI::App* ev = app.add_subcommand("eval", "Error rate of a checkpoint on a labeled dataset");
  ev->add_option("--checkpoint", ev_checkpoint, "Classifier checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset CSV")->required();
  ev->add_option("--out", ev_out, "Also write the report JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // flag/usage problems are input errors here
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(corrupt);
    if (tt->parsed()) return cmd_train_transformer(tt_args);
    if (tc->parsed()) return cmd_train_classifier(tc_args);
    if (ga->parsed()) return cmd_gen_adv(ga_args);
    if (ev->parsed()) return cmd_eval(ev_checkpoint, ev_data, ev_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    // Divergence is a numerical failure; everything else that surfaces as a
    // runtime error here is a missing or unreadable input.
    return std::string(e.what()).find("diverged") != std::string::npos ? 1 : 2;
  }
  return 0;
}
