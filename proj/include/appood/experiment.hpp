#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "appood/data.hpp"
#include "appood/eval.hpp"
#include "appood/scoring.hpp"
#include "appood/training.hpp"
#include "json.hpp"

namespace appood {

struct DatasetPaths {
  std::filesystem::path train;
  std::filesystem::path dev;  // optional; dev examples are carved from train when empty
  std::filesystem::path test;
};

struct ExperimentConfig {
  std::optional<DatasetPaths> dataset;
  std::optional<SynthSpec> synth;  // used when no dataset is given
  FeaturizerConfig featurizer;
  double ind_ratio = 0.25;
  std::size_t k = 10;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TrainConfig train;
  std::vector<ScorerKind> baselines{ScorerKind::kMsp, ScorerKind::kEnergy, ScorerKind::kGda,
                                    ScorerKind::kLof};
  CeTrainConfig ce;
  double gda_regularization = 1e-3;
  std::size_t lof_k = 0;
  bool audit = true;
  std::size_t histogram_bins = 20;
  std::size_t checkpoint_interval = 0;  // 0 keeps only the stage checkpoints
  std::filesystem::path out_dir = "runs";

  void validate() const;
};

/// Unknown keys are rejected so typos do not silently fall back to defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Applies only the keys present in j.
void apply_train_overrides(TrainConfig& config, const nlohmann::json& j);

/// Hex digest of the config without its output directory.
std::string config_digest(const ExperimentConfig& config);

FewShotTask build_task(const ExperimentConfig& config, const Corpus* corpus, std::uint64_t seed);

struct MethodOutcome {
  std::string method;
  double threshold = 0.0;
  ScoredBatch test_scores;
  std::vector<std::string> predictions;
  EvalReport report;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::vector<std::string> test_ids;
  std::vector<std::string> test_gold;
  std::optional<Thresholds> thresholds;
  TrainLog log;
  Model proto_model;
  std::optional<Model> app_model;
  std::vector<MethodOutcome> methods;

  const MethodOutcome& method(const std::string& name) const;
};

/// One seed of the full pipeline: ProtoOOD ("proto"), APP ("app", skipped
/// when selftrain_epochs is 0) and the configured baselines, all on the
/// same splits.
SeedOutcome run_seed(const ExperimentConfig& config, const Corpus* corpus, std::uint64_t seed,
                     const EpochHook& on_epoch = {});

/// Mean and sample standard deviation of every headline metric per method.
nlohmann::json aggregate_reports(const std::vector<EvalReport>& reports);

struct SeedFailure {
  std::uint64_t seed = 0;
  std::string error;
};

struct RunSummary {
  std::filesystem::path out_dir;
  std::vector<SeedOutcome> seeds;
  std::vector<SeedFailure> failures;
  nlohmann::json aggregate;
};

nlohmann::json seed_report_json(const SeedOutcome& outcome);

/// Runs every seed, writing seed_<s>/ artifacts and aggregate.json under
/// config.out_dir. Throws TrainingError when no seed completes.
RunSummary cmd_run(const ExperimentConfig& config);

inline const std::vector<std::string> kAblationVariants{"pcl", "pcl+ind", "pcl+ood", "app"};

LossWeights ablation_weights(const std::string& variant);
RunSummary cmd_ablate(ExperimentConfig config, const std::string& variant);

inline const std::vector<std::string> kSweepParameters{"T", "M_IND", "M_OOD", "lambda"};

void apply_sweep_value(ExperimentConfig& config, const std::string& parameter, double value);

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  nlohmann::json aggregate;
};

/// One cmd_run per value under out_dir/<parameter>_<value>, plus sweep.csv.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, const std::string& parameter,
                                const std::vector<double>& values);
std::string sweep_csv(const std::vector<SweepRow>& rows);

inline const std::vector<std::string> kExportKinds{"scores", "histograms", "trainlog",
                                                   "checkpoints"};

/// Writes files under run_dir/export and returns their paths.
std::vector<std::filesystem::path> cmd_export(const std::filesystem::path& run_dir,
                                              const std::string& what);

}  // namespace appood
