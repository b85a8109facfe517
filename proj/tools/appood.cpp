// Command-line front end: run, ablate, sweep, export, synth, featurize.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "appood/data.hpp"
#include "appood/experiment.hpp"
#include "appood/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Shared by run, ablate and sweep. Every TrainConfig field has a flag of
// the same name; flags win over the config file.
struct RunOptions {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::optional<double> ind_ratio;
  std::optional<std::size_t> k;
  std::string out;
  std::map<std::string, std::string> train_flags;
};

const std::vector<std::string> kTrainFlags{
    "pretrain_epochs", "batch_size",    "lr_projection",   "lr_prototypes",
    "selftrain_epochs", "threshold_rank", "m_ind",          "m_ood",
    "similarity",       "ind_margin_literal", "pseudo_label_similarity", "lambda_pcl",
    "lambda_ind",       "lambda_ood",    "dev_quantile",    "proto_dim",
    "divergence_limit"};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", o.seeds, "Seed(s), replacing the config list");
  cmd->add_option("--ind-ratio", o.ind_ratio, "Fraction of intents treated as in-domain");
  cmd->add_option("--k", o.k, "Labeled examples per in-domain class");
  cmd->add_option("--out", o.out, "Output directory");
  for (const auto& name : kTrainFlags) {
    cmd->add_option_function<std::string>(
        "--" + name, [&o, name](const std::string& v) { o.train_flags[name] = v; },
        "Training override");
  }
}

json flag_value(const std::string& name, const std::string& raw) {
  if (name == "similarity" || name == "pseudo_label_similarity") return raw;
  if (name == "ind_margin_literal") {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw appood::ConfigError("--" + name + " expects true or false");
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != raw.size()) throw appood::ConfigError("--" + name + " expects a number, got " + raw);
  static const std::set<std::string> integral{"pretrain_epochs", "batch_size", "selftrain_epochs",
                                              "threshold_rank", "proto_dim"};
  if (integral.count(name)) {
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw appood::ConfigError("--" + name + " expects a non-negative integer");
    }
    return static_cast<std::size_t>(v);
  }
  return v;
}

appood::ExperimentConfig resolve_config(const RunOptions& o) {
  appood::ExperimentConfig c = appood::load_config(o.config);
  json raw = json::parse(appood::read_file(o.config));
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (o.ind_ratio) c.ind_ratio = *o.ind_ratio;
  if (o.k) c.k = *o.k;
  json overrides = json::object();
  for (const auto& [name, value] : o.train_flags) overrides[name] = flag_value(name, value);
  appood::apply_train_overrides(c.train, overrides);

  if (!o.out.empty()) {
    c.out_dir = o.out;
  } else if (!raw.contains("out_dir")) {
    if (const char* env = std::getenv("APPOOD_OUT"); env && *env) c.out_dir = env;
  }
  c.validate();
  return c;
}

void print_summary(const appood::RunSummary& s) {
  for (const auto& f : s.failures) {
    std::cerr << "warning: seed " << f.seed << " failed: " << f.error << "\n";
  }
  std::cout << s.aggregate.dump(2) << "\n";
  std::cerr << "wrote " << s.out_dir.string() << "\n";
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    try {
      values.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw appood::ConfigError("--values: not a number: " + item);
  }
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot out-of-domain intent detection with prototypical pseudo-labeling"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "Train and evaluate every configured method per seed");
  add_run_options(run, run_opts);

  RunOptions ablate_opts;
  std::string variant;
  auto* ablate = app.add_subcommand("ablate", "Run with one stage-2 loss variant");
  add_run_options(ablate, ablate_opts);
  ablate->add_option("--variant", variant, "pcl | pcl+ind | pcl+ood | app")->required();

  RunOptions sweep_opts;
  std::string param;
  std::string values_text;
  auto* sweep = app.add_subcommand("sweep", "One run per parameter value, summarized as CSV");
  add_run_options(sweep, sweep_opts);
  sweep->add_option("--param", param, "T | M_IND | M_OOD | lambda")->required();
  sweep->add_option("--values", values_text, "Comma-separated values")->required();

  std::string export_dir;
  std::string export_what;
  auto* exp = app.add_subcommand("export", "Export run artifacts as CSV/JSONL");
  exp->add_option("--out", export_dir, "Run directory")->required();
  exp->add_option("--what", export_what, "scores | histograms | trainlog | checkpoints")->required();

  appood::SynthSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus as train/dev/test JSONL");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_spec.seed);
  synth->add_option("--k", synth_spec.k);
  synth->add_option("--ind-classes", synth_spec.n_ind_classes);
  synth->add_option("--ood-clusters", synth_spec.n_ood_clusters);
  synth->add_option("--dim", synth_spec.dim);
  synth->add_option("--unlabeled-per-class", synth_spec.unlabeled_per_class);
  synth->add_option("--test-per-class", synth_spec.test_per_class);
  synth->add_option("--separation", synth_spec.class_separation);
  synth->add_option("--noise", synth_spec.noise_sigma);

  std::string feat_in;
  std::string feat_out;
  appood::FeaturizerConfig feat;
  auto* featurize = app.add_subcommand("featurize", "Hash text JSONL into embedding JSONL");
  featurize->add_option("--in", feat_in, "Input JSONL with text")->required();
  featurize->add_option("--out", feat_out, "Output JSONL")->required();
  featurize->add_option("--dim", feat.dimension);
  featurize->add_option("--hash-seed", feat.hash_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      print_summary(appood::cmd_run(resolve_config(run_opts)));
    } else if (*ablate) {
      print_summary(appood::cmd_ablate(resolve_config(ablate_opts), variant));
    } else if (*sweep) {
      const auto values = parse_values(values_text);
      const auto rows = appood::cmd_sweep(resolve_config(sweep_opts), param, values);
      std::cout << appood::sweep_csv(rows);
    } else if (*exp) {
      for (const auto& p : appood::cmd_export(export_dir, export_what)) {
        std::cout << p.string() << "\n";
      }
    } else if (*synth) {
      const appood::Corpus corpus = appood::synth_corpus(synth_spec);
      const fs::path dir = synth_out;
      appood::write_jsonl(dir / "train.jsonl", corpus.train);
      appood::write_jsonl(dir / "dev.jsonl", corpus.dev);
      appood::write_jsonl(dir / "test.jsonl", corpus.test);
      std::cerr << "wrote " << dir.string() << "\n";
    } else if (*featurize) {
      auto data = appood::load_jsonl(feat_in, feat);
      appood::write_jsonl(feat_out, data);
    }
  } catch (const appood::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
