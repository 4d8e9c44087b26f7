// End-to-end checks against the installed binary: exit codes, artifact
// layout, and byte-level reproducibility of a full run. Each test drives the
// executable exactly as a user would.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit status of a shell command, with output silenced unless captured.
int run(const std::string& args, const std::string& capture_to = "") {
  std::string cmd = std::string(LVAT_BIN) + " " + args;
  cmd += capture_to.empty() ? " >/dev/null 2>&1" : " >" + capture_to + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  REQUIRE(raw != -1);
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (const char c : text) n += c == '\n';
  return n;
}

// Scratch area for one test run, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("lvat_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

// Small but real config: enough updates for training to move, small enough
// to keep the whole suite quick.
void write_config(const fs::path& p, const std::string& reg_kind,
                  const std::string& transformer_kind) {
  json j;
  j["data"] = {{"kind", "two_moons"}, {"n_train", 200}, {"n_test", 100},
               {"noise_sigma", 0.1},  {"n_labeled", 10}, {"seed", 3}};
  if (transformer_kind != "none") {
    j["transformer"] = {{"kind", transformer_kind},
                        {"latent_dim", 2},
                        {"couplings", 4},
                        {"cond_hidden", {16, 16}},
                        {"enc_hidden", {16, 16}},
                        {"dec_hidden", {16, 16}},
                        {"train",
                         {{"lr0", 0.005},
                          {"total_updates", 120},
                          {"decay_updates", 40},
                          {"batch", 64},
                          {"holdout_frac", 0.2}}}};
  }
  j["classifier"] = {{"hidden", {16, 16}}};
  j["regularizer"] = {{"kind", reg_kind}, {"epsilon", 0.3}};
  j["trainer"] = {{"alpha", reg_kind == "none" ? 0.0 : 1.0},
                  {"lr0", 0.005},
                  {"total_updates", 60},
                  {"decay_updates", 20},
                  {"batch_labeled", 16},
                  {"batch_unlabeled", 32},
                  {"eval_every", 30}};
  j["seeds"] = {1, 2};
  std::ofstream out(p);
  out << j.dump(2) << "\n";
}

}  // namespace

TEST_CASE("gradient audit passes clean and fails when sabotaged") {
  CHECK(run("gradcheck") == 0);
  CHECK(run("gradcheck --corrupt") == 1);
}

TEST_CASE("usage and input problems exit with 2") {
  CHECK(run("") == 2);                      // a subcommand is required
  CHECK(run("no-such-command") == 2);
  CHECK(run("gradcheck --no-such-flag") == 2);
  CHECK(run("--help") == 0);
  CHECK(run("train-classifier --config /definitely/missing.json") == 2);
  CHECK(run("eval --checkpoint /missing.json --data /missing.csv") == 2);

  TempDir tmp("badcfg");
  std::ofstream(tmp.path / "broken.json") << "{ not json";
  CHECK(run("train-classifier --config " + (tmp.path / "broken.json").string()) == 2);
  std::ofstream(tmp.path / "unknown.json") << R"({"data": {"frobnicate": 1}})";
  CHECK(run("train-classifier --config " + (tmp.path / "unknown.json").string()) == 2);

  // Overrides are validated exactly like file contents.
  write_config(tmp.path / "ok.json", "none", "none");
  CHECK(run("train-classifier --config " + (tmp.path / "ok.json").string() +
            " --set trainer.alpha=none_of_that") == 2);
}

TEST_CASE("supervised baseline run produces the full artifact set") {
  TempDir tmp("baseline");
  const fs::path cfg = tmp.path / "run.json";
  write_config(cfg, "none", "none");

  CHECK(run("train-classifier --config " + cfg.string() + " --out " + tmp.str()) == 0);
  CHECK(fs::exists(tmp.path / "summary.json"));
  CHECK(fs::exists(tmp.path / "test.csv"));
  CHECK(fs::exists(tmp.path / "metrics_seed1.csv"));
  CHECK(fs::exists(tmp.path / "metrics_seed2.csv"));
  CHECK(fs::exists(tmp.path / "classifier_seed1.json"));
  CHECK(fs::exists(tmp.path / "classifier_seed2.json"));

  const json summary = json::parse(slurp(tmp.path / "summary.json"));
  CHECK(summary["baseline"] == true);
  CHECK(summary["regularizer"] == "none");
  CHECK(summary["seeds"].size() == 2);
  CHECK(summary["mean_test_error"].get<double>() >= 0.0);
  CHECK(summary["mean_test_error"].get<double>() <= 1.0);
  CHECK(summary["config_hash"].get<std::string>().size() == 16);

  // One metrics row per update plus the header.
  const std::string metrics = slurp(tmp.path / "metrics_seed1.csv");
  CHECK(line_count(metrics) == 61);
  CHECK(metrics.rfind("step,lr,loss_sl,loss_usl,loss_total,test_error\n", 0) == 0);

  // The held-out error in the summary is reproducible through eval.
  const double recorded = summary["seeds"][0]["final_test_error"].get<double>();
  CHECK(run("eval --checkpoint " + (tmp.path / "classifier_seed1.json").string() + " --data " +
                (tmp.path / "test.csv").string(),
            (tmp.path / "eval.json").string()) == 0);
  const json eval_report = json::parse(slurp(tmp.path / "eval.json"));
  CHECK(eval_report["error_rate"].get<double>() == doctest::Approx(recorded).epsilon(1e-12));
  CHECK(eval_report["n"] == 100);
}

TEST_CASE("reruns are byte-identical") {
  TempDir a("rerun_a");
  TempDir b("rerun_b");
  const fs::path cfg = a.path / "run.json";
  write_config(cfg, "vat", "none");

  CHECK(run("train-classifier --config " + cfg.string() + " --seed 1 --out " + a.str()) == 0);
  CHECK(run("train-classifier --config " + cfg.string() + " --seed 1 --out " + b.str()) == 0);
  CHECK(slurp(a.path / "metrics_seed1.csv") == slurp(b.path / "metrics_seed1.csv"));
  CHECK(slurp(a.path / "classifier_seed1.json") == slurp(b.path / "classifier_seed1.json"));
  CHECK(slurp(a.path / "summary.json") == slurp(b.path / "summary.json"));
  CHECK(slurp(a.path / "test.csv") == slurp(b.path / "test.csv"));
}

TEST_CASE("latent training needs its transformer artifact first") {
  TempDir tmp("lvat");
  const fs::path cfg = tmp.path / "run.json";
  write_config(cfg, "lvat-flow", "flow");

  // Classifier first: the checkpoint is missing, which is an input error.
  CHECK(run("train-classifier --config " + cfg.string() + " --out " + tmp.str()) == 2);

  CHECK(run("train-transformer --config " + cfg.string() + " --out " + tmp.str()) == 0);
  CHECK(fs::exists(tmp.path / "transformer.json"));
  const std::string history = slurp(tmp.path / "transformer_history.csv");
  CHECK(history.rfind("epoch,holdout_loss\n", 0) == 0);
  CHECK(line_count(history) >= 3);  // header, epoch 0, at least one epoch

  CHECK(run("train-classifier --config " + cfg.string() + " --seed 1 --out " + tmp.str()) == 0);
  const json summary = json::parse(slurp(tmp.path / "summary.json"));
  CHECK(summary["baseline"] == false);
  CHECK(summary["regularizer"] == "lvat-flow");

  // A VAE checkpoint cannot stand in for a flow.
  TempDir vae_dir("vae_ckpt");
  const fs::path vae_cfg = vae_dir.path / "run.json";
  write_config(vae_cfg, "lvat-vae", "vae");
  CHECK(run("train-transformer --config " + vae_cfg.string() + " --out " + vae_dir.str()) == 0);
  CHECK(run("train-classifier --config " + cfg.string() + " --out " + tmp.str() +
            " --transformer " + (vae_dir.path / "transformer.json").string()) == 2);
}

TEST_CASE("gen-adv writes distances whose shape matches the method") {
  TempDir tmp("genadv");
  const fs::path cfg = tmp.path / "run.json";
  write_config(cfg, "vat", "none");
  CHECK(run("train-classifier --config " + cfg.string() + " --seed 1 --out " + tmp.str()) == 0);
  const std::string ckpt = (tmp.path / "classifier_seed1.json").string();

  CHECK(run("gen-adv --config " + cfg.string() + " --checkpoint " + ckpt + " --n 64 --bins 8" +
            " --out " + tmp.str()) == 0);
  const std::string adv = slurp(tmp.path / "adversarial.csv");
  CHECK(adv.rfind("sample_id,input_space_distance,kl_cost\n", 0) == 0);
  CHECK(line_count(adv) == 65);
  const std::string hist = slurp(tmp.path / "adversarial_hist.csv");
  CHECK(hist.rfind("bin_left,count\n", 0) == 0);
  CHECK(line_count(hist) == 9);

  // The pi baseline has no adversarial direction to report.
  write_config(tmp.path / "pi.json", "pi", "none");
  CHECK(run("gen-adv --config " + (tmp.path / "pi.json").string() + " --checkpoint " + ckpt +
            " --n 8 --out " + tmp.str()) == 2);

  // Latent variant carries the latent and reconstruction columns.
  TempDir ltmp("genadv_lvat");
  const fs::path lcfg = ltmp.path / "run.json";
  write_config(lcfg, "lvat-flow", "flow");
  CHECK(run("train-transformer --config " + lcfg.string() + " --out " + ltmp.str()) == 0);
  CHECK(run("train-classifier --config " + lcfg.string() + " --seed 1 --out " + ltmp.str()) == 0);
  CHECK(run("gen-adv --config " + lcfg.string() + " --checkpoint " +
            (ltmp.path / "classifier_seed1.json").string() + " --n 32 --out " + ltmp.str()) == 0);
  const std::string ladv = slurp(ltmp.path / "adversarial.csv");
  CHECK(ladv.rfind("sample_id,input_space_distance,latent_space_distance,"
                   "reconstruction_distance,kl_cost\n",
                   0) == 0);
  CHECK(line_count(ladv) == 33);
}

TEST_CASE("eval rejects unusable datasets") {
  TempDir tmp("eval_bad");
  const fs::path cfg = tmp.path / "run.json";
  write_config(cfg, "none", "none");
  CHECK(run("train-classifier --config " + cfg.string() + " --seed 1 --out " + tmp.str()) == 0);
  const std::string ckpt = (tmp.path / "classifier_seed1.json").string();

  // Unlabeled file: strip the label column off test.csv.
  std::ifstream in(tmp.path / "test.csv");
  std::ofstream out(tmp.path / "unlabeled.csv");
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!first && !line.empty() && line[0] != '#') {
      line = line.substr(0, line.rfind(',') + 1);
    }
    first = false;
    out << line << "\n";
  }
  out.close();
  CHECK(run("eval --checkpoint " + ckpt + " --data " + (tmp.path / "unlabeled.csv").string()) ==
        2);
}
