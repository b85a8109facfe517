#include "appood/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "appood/io.hpp"

namespace appood {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kMetricNames{"all_acc", "all_f1",     "ind_acc",
                                            "ind_f1",  "ood_recall", "ood_f1"};

double metric(const EvalReport& r, const std::string& name) {
  if (name == "all_acc") return r.all_acc;
  if (name == "all_f1") return r.all_f1;
  if (name == "ind_acc") return r.ind_acc;
  if (name == "ind_f1") return r.ind_f1;
  if (name == "ood_recall") return r.ood_recall;
  return r.ood_f1;
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SynthSpec synth_from_json(const json& j) {
  check_keys(j,
             {"n_ind_classes", "n_ood_clusters", "dim", "k", "unlabeled_per_class",
              "test_per_class", "class_separation", "noise_sigma"},
             "synth");
  SynthSpec s;
  read_if(j, "n_ind_classes", s.n_ind_classes);
  read_if(j, "n_ood_clusters", s.n_ood_clusters);
  read_if(j, "dim", s.dim);
  read_if(j, "k", s.k);
  read_if(j, "unlabeled_per_class", s.unlabeled_per_class);
  read_if(j, "test_per_class", s.test_per_class);
  read_if(j, "class_separation", s.class_separation);
  read_if(j, "noise_sigma", s.noise_sigma);
  return s;
}

json synth_to_json(const SynthSpec& s) {
  return {{"n_ind_classes", s.n_ind_classes},
          {"n_ood_clusters", s.n_ood_clusters},
          {"dim", s.dim},
          {"k", s.k},
          {"unlabeled_per_class", s.unlabeled_per_class},
          {"test_per_class", s.test_per_class},
          {"class_separation", s.class_separation},
          {"noise_sigma", s.noise_sigma}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (dataset.has_value() == synth.has_value()) {
    throw ConfigError("exactly one of \"dataset\" and \"synth\" must be given");
  }
  if (dataset) {
    if (dataset->train.empty() || dataset->test.empty()) {
      throw ConfigError("dataset needs train and test paths");
    }
    if (!(ind_ratio > 0.0 && ind_ratio < 1.0)) throw ConfigError("ind_ratio must lie in (0, 1)");
  }
  if (k < 1) throw ConfigError("k must be >= 1");
  if (histogram_bins < 2) throw ConfigError("histogram_bins must be >= 2");
  if (ce.epochs < 1 || ce.batch_size < 1 || !(ce.learning_rate > 0.0)) {
    throw ConfigError("ce epochs, batch_size and learning_rate must be positive");
  }
  if (gda_regularization < 0.0) throw ConfigError("gda_regularization must be >= 0");
  if (featurizer.dimension < 1) throw ConfigError("featurizer dimension must be >= 1");
  train.validate();
}

json train_config_to_json(const TrainConfig& c) {
  return {{"pretrain_epochs", c.pretrain_epochs},
          {"batch_size", c.batch_size},
          {"lr_projection", c.lr_projection},
          {"lr_prototypes", c.lr_prototypes},
          {"selftrain_epochs", c.selftrain_epochs},
          {"threshold_rank", c.threshold_rank},
          {"m_ind", c.margins.m_ind},
          {"m_ood", c.margins.m_ood},
          {"similarity", to_string(c.margins.mode)},
          {"ind_margin_literal", c.margins.ind_margin_literal},
          {"pseudo_label_similarity", to_string(c.pseudo_label_mode)},
          {"lambda_pcl", c.weights.pcl},
          {"lambda_ind", c.weights.ind},
          {"lambda_ood", c.weights.ood},
          {"dev_quantile", c.dev_quantile},
          {"proto_dim", c.proto_dim},
          {"divergence_limit", c.divergence_limit}};
}

void apply_train_overrides(TrainConfig& c, const json& j) {
  check_keys(j,
             {"pretrain_epochs", "batch_size", "lr_projection", "lr_prototypes",
              "selftrain_epochs", "threshold_rank", "m_ind", "m_ood", "similarity",
              "ind_margin_literal", "pseudo_label_similarity", "lambda_pcl", "lambda_ind",
              "lambda_ood", "dev_quantile", "proto_dim", "divergence_limit"},
             "train");
  try {
    read_if(j, "pretrain_epochs", c.pretrain_epochs);
    read_if(j, "batch_size", c.batch_size);
    read_if(j, "lr_projection", c.lr_projection);
    read_if(j, "lr_prototypes", c.lr_prototypes);
    read_if(j, "selftrain_epochs", c.selftrain_epochs);
    read_if(j, "threshold_rank", c.threshold_rank);
    read_if(j, "m_ind", c.margins.m_ind);
    read_if(j, "m_ood", c.margins.m_ood);
    if (j.contains("similarity")) {
      c.margins.mode = similarity_mode_from_string(j.at("similarity").get<std::string>());
    }
    read_if(j, "ind_margin_literal", c.margins.ind_margin_literal);
    if (j.contains("pseudo_label_similarity")) {
      c.pseudo_label_mode =
          similarity_mode_from_string(j.at("pseudo_label_similarity").get<std::string>());
    }
    read_if(j, "lambda_pcl", c.weights.pcl);
    read_if(j, "lambda_ind", c.weights.ind);
    read_if(j, "lambda_ood", c.weights.ood);
    read_if(j, "dev_quantile", c.dev_quantile);
    read_if(j, "proto_dim", c.proto_dim);
    read_if(j, "divergence_limit", c.divergence_limit);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j,
             {"dataset", "synth", "featurizer", "ind_ratio", "k", "seeds", "train", "baselines",
              "ce", "gda_regularization", "lof_k", "audit", "histogram_bins",
              "checkpoint_interval", "out_dir"},
             "config");
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, {"train", "dev", "test"}, "dataset");
      DatasetPaths p;
      p.train = d.at("train").get<std::string>();
      if (d.contains("dev")) p.dev = d.at("dev").get<std::string>();
      p.test = d.at("test").get<std::string>();
      c.dataset = p;
    }
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"));
    if (j.contains("featurizer")) {
      const auto& f = j.at("featurizer");
      check_keys(f, {"dimension", "hash_seed"}, "featurizer");
      read_if(f, "dimension", c.featurizer.dimension);
      read_if(f, "hash_seed", c.featurizer.hash_seed);
    }
    read_if(j, "ind_ratio", c.ind_ratio);
    read_if(j, "k", c.k);
    read_if(j, "seeds", c.seeds);
    if (j.contains("train")) apply_train_overrides(c.train, j.at("train"));
    if (j.contains("baselines")) {
      c.baselines.clear();
      for (const auto& name : j.at("baselines")) {
        const auto kind = scorer_kind_from_string(name.get<std::string>());
        if (kind == ScorerKind::kProto) throw ConfigError("proto is not a baseline");
        c.baselines.push_back(kind);
      }
    }
    if (j.contains("ce")) {
      const auto& e = j.at("ce");
      check_keys(e, {"epochs", "learning_rate", "batch_size"}, "ce");
      read_if(e, "epochs", c.ce.epochs);
      read_if(e, "learning_rate", c.ce.learning_rate);
      read_if(e, "batch_size", c.ce.batch_size);
    }
    read_if(j, "gda_regularization", c.gda_regularization);
    read_if(j, "lof_k", c.lof_k);
    read_if(j, "audit", c.audit);
    read_if(j, "histogram_bins", c.histogram_bins);
    read_if(j, "checkpoint_interval", c.checkpoint_interval);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  if (c.dataset) {
    j["dataset"] = {{"train", c.dataset->train.string()},
                    {"dev", c.dataset->dev.string()},
                    {"test", c.dataset->test.string()}};
  }
  if (c.synth) j["synth"] = synth_to_json(*c.synth);
  j["featurizer"] = {{"dimension", c.featurizer.dimension}, {"hash_seed", c.featurizer.hash_seed}};
  j["ind_ratio"] = c.ind_ratio;
  j["k"] = c.k;
  j["seeds"] = c.seeds;
  j["train"] = train_config_to_json(c.train);
  auto baselines = json::array();
  for (auto kind : c.baselines) baselines.push_back(to_string(kind));
  j["baselines"] = baselines;
  j["ce"] = {{"epochs", c.ce.epochs},
             {"learning_rate", c.ce.learning_rate},
             {"batch_size", c.ce.batch_size}};
  j["gda_regularization"] = c.gda_regularization;
  j["lof_k"] = c.lof_k;
  j["audit"] = c.audit;
  j["histogram_bins"] = c.histogram_bins;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["out_dir"] = c.out_dir.string();
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  ExperimentConfig c = config_from_json(j);
  // Dataset paths are relative to the config file.
  const fs::path base = path.parent_path();
  auto resolve = [&](fs::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  if (c.dataset) {
    resolve(c.dataset->train);
    resolve(c.dataset->dev);
    resolve(c.dataset->test);
  }
  return c;
}

std::string config_digest(const ExperimentConfig& config) {
  json j = config_to_json(config);
  j.erase("out_dir");
  j.erase("seeds");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

FewShotTask build_task(const ExperimentConfig& config, const Corpus* corpus, std::uint64_t seed) {
  if (config.synth) {
    SynthSpec spec = *config.synth;
    spec.seed = seed;
    spec.k = config.k;
    return synth_task(spec);
  }
  if (!corpus) throw ConfigError("build_task: dataset config without a loaded corpus");
  return make_fewshot_splits(*corpus, config.ind_ratio, config.k, seed);
}

const MethodOutcome& SeedOutcome::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.method == name) return m;
  }
  throw std::out_of_range("no method \"" + name + "\" in seed " + std::to_string(seed));
}

SeedOutcome run_seed(const ExperimentConfig& config, const Corpus* corpus, std::uint64_t seed,
                     const EpochHook& on_epoch) {
  const FewShotTask task = build_task(config, corpus, seed);
  TrainConfig tc = config.train;
  tc.seed = seed;
  tc.validate();
  const std::string digest = config_digest(config);
  const auto& classes = task.ind_classes();
  const auto& test = task.test();

  LabelMap gold;
  for (std::size_t i = 0; i < test.size(); ++i) gold.emplace(test.ids[i], test.gold[i]);

  auto score_method = [&](const std::string& name, const ConfidenceScorer& scorer) {
    MethodOutcome m;
    m.method = name;
    m.threshold = calibrate_threshold(scorer.score(task.dev().embeddings).scores, tc.dev_quantile);
    m.test_scores = scorer.score(test.embeddings);
    m.predictions = open_set_predictions(m.test_scores, m.threshold, classes);
    LabelMap predicted;
    for (std::size_t i = 0; i < test.size(); ++i) predicted.emplace(test.ids[i], m.predictions[i]);
    m.report = evaluate(predicted, gold, classes);
    m.report.method = name;
    m.report.seed = seed;
    m.report.config_digest = digest;
    return m;
  };

  SeedOutcome out;
  out.seed = seed;
  out.test_ids = test.ids;
  out.test_gold = test.gold;
  out.proto_model = pretrain(task.training(), tc);
  out.methods.push_back(score_method("proto", ConfidenceScorer::proto(out.proto_model)));

  if (tc.selftrain_epochs > 0) {
    out.thresholds =
        compute_thresholds(out.proto_model, task.unlabeled(), tc.threshold_rank, tc.pseudo_label_mode);
    AuditSource audit;
    if (config.audit) {
      audit.unlabeled_gold = &task.audit_labels();
      audit.ind_classes = &classes;
      audit.histogram_bins = config.histogram_bins;
    }
    SelfTrainResult st =
        self_train(out.proto_model, task.training(), *out.thresholds, tc, audit, on_epoch);
    out.log = std::move(st.log);
    out.app_model = std::move(st.model);
    out.methods.push_back(score_method("app", ConfidenceScorer::proto(*out.app_model)));
  }

  const auto& labeled = task.labeled();
  std::optional<CeHead> head;
  auto ce_head = [&]() -> const CeHead& {
    if (!head) {
      CeTrainConfig ce = config.ce;
      ce.seed = derive_seed(seed, 21);
      head = train_ce_head(labeled.embeddings, labeled.labels, classes.size(), ce);
    }
    return *head;
  };
  for (auto kind : config.baselines) {
    switch (kind) {
      case ScorerKind::kMsp:
        out.methods.push_back(score_method("msp", ConfidenceScorer::msp(ce_head())));
        break;
      case ScorerKind::kEnergy:
        out.methods.push_back(score_method("energy", ConfidenceScorer::energy(ce_head())));
        break;
      case ScorerKind::kGda:
        out.methods.push_back(score_method(
            "gda", ConfidenceScorer::gda(gda_fit(labeled.embeddings, labeled.labels,
                                                 classes.size(), config.gda_regularization))));
        break;
      case ScorerKind::kLof:
        out.methods.push_back(score_method(
            "lof", ConfidenceScorer::lof(lof_fit(labeled.embeddings, config.lof_k), ce_head())));
        break;
      case ScorerKind::kProto:
        break;
    }
  }
  return out;
}

json aggregate_reports(const std::vector<EvalReport>& reports) {
  json j;
  j["n"] = reports.size();
  for (const auto& name : kMetricNames) {
    double mean = 0.0;
    for (const auto& r : reports) mean += metric(r, name);
    if (!reports.empty()) mean /= static_cast<double>(reports.size());
    double var = 0.0;
    for (const auto& r : reports) var += (metric(r, name) - mean) * (metric(r, name) - mean);
    const double sd = reports.size() > 1 ? std::sqrt(var / static_cast<double>(reports.size() - 1)) : 0.0;
    j[name] = {{"mean", round2(mean)}, {"std", round2(sd)}};
  }
  return j;
}

json seed_report_json(const SeedOutcome& o) {
  json j;
  j["seed"] = o.seed;
  j["config_digest"] = o.methods.empty() ? "" : o.methods.front().report.config_digest;
  if (o.thresholds) {
    j["pseudo_label_thresholds"] = {{"lower", o.thresholds->lower}, {"upper", o.thresholds->upper}};
  }
  auto methods = json::array();
  for (const auto& m : o.methods) {
    json r = report_to_json(m.report);
    r["threshold"] = m.threshold;
    methods.push_back(std::move(r));
  }
  j["methods"] = methods;
  return j;
}

namespace {

std::string checkpoint_name(std::size_t epoch) { return "epoch_" + std::to_string(epoch) + ".json"; }

json epoch_json(const EpochLog& e, std::size_t checkpoint_interval) {
  json j{{"epoch", e.epoch},
         {"loss", e.loss},
         {"pcl", e.pcl},
         {"ind", e.ind},
         {"ood", e.ood},
         {"pseudo_ind", e.pseudo_ind},
         {"pseudo_ood", e.pseudo_ood},
         {"abstain", e.abstain}};
  if (e.audit) {
    j["audit"] = {{"ind_total", e.audit->ind_total},
                  {"ind_correct", e.audit->ind_correct},
                  {"ood_total", e.audit->ood_total},
                  {"ood_correct", e.audit->ood_correct}};
  }
  if (e.separation) j["separation"] = *e.separation;
  if (e.histogram) {
    j["histogram"] = {{"edges", e.histogram->edges},
                      {"ind_counts", e.histogram->ind_counts},
                      {"ood_counts", e.histogram->ood_counts}};
  }
  if (checkpoint_interval > 0 && e.epoch % checkpoint_interval == 0) {
    j["checkpoint"] = "checkpoints/" + checkpoint_name(e.epoch);
  }
  return j;
}

void write_seed_artifacts(const ExperimentConfig& config, const fs::path& dir,
                          const SeedOutcome& o) {
  write_file_atomic(dir / "report.json", seed_report_json(o).dump(2) + "\n");

  std::string log;
  for (const auto& e : o.log.epochs) log += epoch_json(e, config.checkpoint_interval).dump() + "\n";
  write_file_atomic(dir / "trainlog.jsonl", log);

  json scores;
  scores["ids"] = o.test_ids;
  scores["gold"] = o.test_gold;
  json methods = json::object();
  for (const auto& m : o.methods) {
    methods[m.method] = {{"threshold", m.threshold},
                         {"scores", m.test_scores.scores},
                         {"predicted", m.predictions}};
  }
  scores["methods"] = methods;
  write_file_atomic(dir / "scores.json", scores.dump() + "\n");

  save_checkpoint(o.proto_model, dir / "checkpoints" / "proto.json");
  if (o.app_model) save_checkpoint(*o.app_model, dir / "checkpoints" / "app.json");
}

Corpus load_corpus(const ExperimentConfig& config) {
  Corpus corpus;
  const auto& p = *config.dataset;
  for (const auto* path : {&p.train, &p.dev, &p.test}) {
    if (!path->empty() && !fs::exists(*path)) {
      throw ConfigError("dataset file not found: " + path->string());
    }
  }
  corpus.train = load_jsonl(p.train, config.featurizer);
  if (!p.dev.empty()) corpus.dev = load_jsonl(p.dev, config.featurizer);
  corpus.test = load_jsonl(p.test, config.featurizer);
  return corpus;
}

}  // namespace

RunSummary cmd_run(const ExperimentConfig& config) {
  config.validate();
  std::optional<Corpus> corpus;
  if (config.dataset) corpus = load_corpus(config);

  RunSummary summary;
  summary.out_dir = config.out_dir;
  fs::create_directories(config.out_dir);
  write_file_atomic(config.out_dir / "config.json", config_to_json(config).dump(2) + "\n");

  for (auto seed : config.seeds) {
    const fs::path dir = config.out_dir / ("seed_" + std::to_string(seed));
    try {
      EpochHook hook;
      if (config.checkpoint_interval > 0) {
        hook = [&](const EpochLog& e, const Model& m) {
          if (e.epoch % config.checkpoint_interval == 0) {
            save_checkpoint(m, dir / "checkpoints" / checkpoint_name(e.epoch));
          }
        };
      }
      fs::create_directories(dir / "checkpoints");
      SeedOutcome outcome = run_seed(config, corpus ? &*corpus : nullptr, seed, hook);
      write_seed_artifacts(config, dir, outcome);
      summary.seeds.push_back(std::move(outcome));
    } catch (const std::exception& e) {
      summary.failures.push_back({seed, e.what()});
      write_file_atomic(dir / "error.txt", std::string(e.what()) + "\n");
    }
  }

  json agg;
  agg["config_digest"] = config_digest(config);
  json completed = json::array();
  for (const auto& s : summary.seeds) completed.push_back(s.seed);
  agg["seeds"] = completed;
  json failed = json::array();
  for (const auto& f : summary.failures) failed.push_back({{"seed", f.seed}, {"error", f.error}});
  agg["failed"] = failed;
  if (!summary.failures.empty()) {
    agg["warning"] = std::to_string(summary.failures.size()) + " of " +
                     std::to_string(config.seeds.size()) + " seeds failed";
  }
  std::map<std::string, std::vector<EvalReport>> by_method;
  for (const auto& s : summary.seeds) {
    for (const auto& m : s.methods) by_method[m.method].push_back(m.report);
  }
  json methods = json::object();
  for (const auto& [name, reports] : by_method) methods[name] = aggregate_reports(reports);
  agg["methods"] = methods;
  summary.aggregate = agg;
  write_file_atomic(config.out_dir / "aggregate.json", agg.dump(2) + "\n");

  if (summary.seeds.empty()) {
    throw TrainingError("every seed failed; first error: " + summary.failures.front().error);
  }
  return summary;
}

LossWeights ablation_weights(const std::string& variant) {
  if (variant == "pcl") return {1.0, 0.0, 0.0};
  if (variant == "pcl+ind") return {1.0, 0.05, 0.0};
  if (variant == "pcl+ood") return {1.0, 0.0, 0.05};
  if (variant == "app") return {1.0, 0.05, 0.05};
  throw ConfigError("unknown ablation variant \"" + variant + "\" (pcl, pcl+ind, pcl+ood, app)");
}

RunSummary cmd_ablate(ExperimentConfig config, const std::string& variant) {
  config.train.weights = ablation_weights(variant);
  return cmd_run(config);
}

void apply_sweep_value(ExperimentConfig& config, const std::string& parameter, double value) {
  if (!std::isfinite(value)) throw ConfigError("sweep values must be finite");
  if (parameter == "T") {
    if (value < 1.0 || value != std::floor(value)) {
      throw ConfigError("T must be a positive integer, got " + fmt_short(value));
    }
    config.train.threshold_rank = static_cast<std::size_t>(value);
  } else if (parameter == "M_IND") {
    config.train.margins.m_ind = value;
  } else if (parameter == "M_OOD") {
    config.train.margins.m_ood = value;
  } else if (parameter == "lambda") {
    config.train.weights.ind = value;
    config.train.weights.ood = value;
  } else {
    throw ConfigError("unknown sweep parameter \"" + parameter + "\" (T, M_IND, M_OOD, lambda)");
  }
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, const std::string& parameter,
                                const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  for (double v : values) {
    ExperimentConfig probe = config;
    apply_sweep_value(probe, parameter, v);
  }
  std::vector<SweepRow> rows;
  for (double v : values) {
    ExperimentConfig c = config;
    apply_sweep_value(c, parameter, v);
    c.out_dir = config.out_dir / (parameter + "_" + fmt_short(v));
    RunSummary s = cmd_run(c);
    rows.push_back({parameter, v, s.aggregate});
  }
  write_file_atomic(config.out_dir / "sweep.csv", sweep_csv(rows));
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "parameter,value,method,n";
  for (const auto& m : kMetricNames) out += "," + m + "_mean," + m + "_std";
  out += "\n";
  for (const auto& row : rows) {
    for (const auto& [method, agg] : row.aggregate.at("methods").items()) {
      out += row.parameter + "," + fmt_short(row.value) + "," + method + "," +
             std::to_string(agg.at("n").get<std::size_t>());
      for (const auto& m : kMetricNames) {
        out += "," + fmt_short(agg.at(m).at("mean").get<double>()) + "," +
               fmt_short(agg.at(m).at("std").get<double>());
      }
      out += "\n";
    }
  }
  return out;
}

namespace {

std::vector<std::pair<std::uint64_t, fs::path>> seed_dirs(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw DataError("run directory not found: " + run_dir.string());
  std::vector<std::pair<std::uint64_t, fs::path>> dirs;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("seed_", 0) != 0) continue;
    const std::string digits = name.substr(5);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
    dirs.emplace_back(std::stoull(digits), entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no seed_<s> directories in " + run_dir.string());
  return dirs;
}

fs::path require_artifact(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("missing artifact: " + p.string());
  return p;
}

std::vector<json> read_trainlog(const fs::path& path) {
  std::vector<json> lines;
  std::istringstream in(read_file(require_artifact(path)));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(json::parse(line));
  }
  return lines;
}

}  // namespace

std::vector<fs::path> cmd_export(const fs::path& run_dir, const std::string& what) {
  if (std::find(kExportKinds.begin(), kExportKinds.end(), what) == kExportKinds.end()) {
    throw ConfigError("unknown export kind \"" + what +
                      "\" (scores, histograms, trainlog, checkpoints)");
  }
  const auto dirs = seed_dirs(run_dir);
  const fs::path out_dir = run_dir / "export";
  std::vector<fs::path> written;

  for (const auto& [seed, dir] : dirs) {
    const std::string tag = "seed" + std::to_string(seed);
    if (what == "scores") {
      const json s = json::parse(read_file(require_artifact(dir / "scores.json")));
      const auto ids = s.at("ids").get<std::vector<std::string>>();
      const auto gold = s.at("gold").get<std::vector<std::string>>();
      for (const auto& [method, m] : s.at("methods").items()) {
        const auto scores = m.at("scores").get<std::vector<double>>();
        const auto predicted = m.at("predicted").get<std::vector<std::string>>();
        std::string csv = "id,score,gold,predicted\n";
        for (std::size_t i = 0; i < ids.size(); ++i) {
          csv += csv_field(ids[i]) + "," + fmt_double(scores[i]) + "," + csv_field(gold[i]) + "," +
                 csv_field(predicted[i]) + "\n";
        }
        const fs::path p = out_dir / ("scores_" + tag + "_" + method + ".csv");
        write_file_atomic(p, csv);
        written.push_back(p);
      }
    } else if (what == "histograms") {
      const auto lines = read_trainlog(dir / "trainlog.jsonl");
      for (const auto& e : lines) {
        if (!e.contains("histogram")) continue;
        const auto& h = e.at("histogram");
        const auto edges = h.at("edges").get<std::vector<double>>();
        const auto ind = h.at("ind_counts").get<std::vector<std::size_t>>();
        const auto ood = h.at("ood_counts").get<std::vector<std::size_t>>();
        std::string csv = "bin_lower,bin_upper,ind_count,ood_count\n";
        for (std::size_t b = 0; b < ind.size(); ++b) {
          csv += fmt_double(edges[b]) + "," + fmt_double(edges[b + 1]) + "," +
                 std::to_string(ind[b]) + "," + std::to_string(ood[b]) + "\n";
        }
        const fs::path p = out_dir / ("histogram_" + tag + "_epoch" +
                                      std::to_string(e.at("epoch").get<std::size_t>()) + ".csv");
        write_file_atomic(p, csv);
        written.push_back(p);
      }
    } else if (what == "trainlog") {
      std::string out;
      for (auto e : read_trainlog(dir / "trainlog.jsonl")) {
        e.erase("histogram");
        out += e.dump() + "\n";
      }
      const fs::path p = out_dir / ("trainlog_" + tag + ".jsonl");
      write_file_atomic(p, out);
      written.push_back(p);
    } else {
      const fs::path cdir = require_artifact(dir / "checkpoints");
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(cdir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw DataError("missing artifact: no checkpoints in " + cdir.string());
      for (const auto& f : files) {
        const Model m = load_checkpoint(f);
        const fs::path p = out_dir / ("checkpoint_" + tag + "_" + f.stem().string() + ".json");
        save_checkpoint(m, p);
        written.push_back(p);
      }
    }
  }
  if (written.empty()) {
    throw DataError("missing artifact: no " + what + " found under " + run_dir.string() +
                    (what == "histograms" ? " (histograms need audit enabled)" : ""));
  }
  return written;
}

}  // namespace appood
