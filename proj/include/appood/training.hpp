#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "appood/data.hpp"
#include "appood/eval.hpp"
#include "appood/kernels.hpp"
#include "appood/losses.hpp"
#include "appood/model.hpp"

namespace appood {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t pretrain_epochs = 20;
  std::size_t batch_size = 20;
  double lr_projection = 1e-4;
  double lr_prototypes = 1e-3;
  std::size_t selftrain_epochs = 50;
  std::size_t threshold_rank = 5;
  MarginConfig margins;
  LossWeights weights;
  std::uint64_t seed = 0;
  double dev_quantile = 0.75;
  std::size_t proto_dim = 256;
  /// Similarity behind the pseudo-labeling scores and thresholds.
  SimilarityMode pseudo_label_mode = SimilarityMode::kCosine;
  /// Abort when a batch loss is non-finite or exceeds this value.
  double divergence_limit = 1e6;

  void validate() const;
};

/// Pseudo-labeling thresholds, frozen after the first stage.
struct Thresholds {
  double lower = 0.0;  // S
  double upper = 0.0;  // L
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean batch loss
  double pcl = 0.0;
  double ind = 0.0;
  double ood = 0.0;
  std::size_t pseudo_ind = 0;
  std::size_t pseudo_ood = 0;
  std::size_t abstain = 0;
  std::optional<PseudoAudit> audit;
  /// Test-time confidence on the unlabeled pool after this epoch, split by
  /// audit labels (only with auditing enabled).
  std::optional<double> separation;
  std::optional<ScoreHistogram> histogram;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

/// Gold labels of the unlabeled pool, supplied only when auditing is wanted.
struct AuditSource {
  const std::vector<std::string>* unlabeled_gold = nullptr;
  const std::vector<std::string>* ind_classes = nullptr;
  std::size_t histogram_bins = 20;
};

/// Stage 1: prototypical contrastive training on the labeled IND set.
Model pretrain(const TrainingData& data, const TrainConfig& config);

/// Continue stage-1 training of an existing model for config.pretrain_epochs.
void pretrain_in_place(Model& model, const TrainingData& data, const TrainConfig& config);

/// S = T-th smallest and L = T-th largest score (ascending sort, ties by id).
Thresholds thresholds_from_scores(const std::vector<double>& scores,
                                  const std::vector<std::string>& ids, std::size_t rank);

Thresholds compute_thresholds(const Model& model, const UnlabeledSet& unlabeled,
                              std::size_t rank, SimilarityMode mode = SimilarityMode::kCosine);

/// score > L -> pseudo-IND (argmax class), score < S -> pseudo-OOD, else abstain.
PseudoPartition partition_from_scores(const kernels::MaxSimilarity& scored,
                                      const std::vector<std::string>& ids,
                                      const Thresholds& thresholds, std::size_t epoch = 0);

PseudoPartition assign_pseudo_labels(const Model& model, const UnlabeledSet& unlabeled,
                                     const Thresholds& thresholds, std::size_t epoch = 0,
                                     SimilarityMode mode = SimilarityMode::kCosine);

struct SelfTrainResult {
  Model model;
  TrainLog log;
  std::optional<PseudoPartition> last_partition;
};

/// Stage 2: per-epoch pseudo-labeling with frozen thresholds followed by
/// one pass of stage-2 optimization.
/// Called after every self-training epoch, e.g. for periodic checkpoints.
using EpochHook = std::function<void(const EpochLog&, const Model&)>;

SelfTrainResult self_train(Model model, const TrainingData& data, const Thresholds& thresholds,
                           const TrainConfig& config, const AuditSource& audit = {},
                           const EpochHook& on_epoch = {});

}  // namespace appood
