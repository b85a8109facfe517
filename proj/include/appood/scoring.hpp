#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "appood/model.hpp"
#include "appood/numerics.hpp"

namespace appood {

/// Confidence-score families. Every score is oriented so that higher means
/// more likely in-domain.
enum class ScorerKind { kProto, kMsp, kEnergy, kGda, kLof };

std::string to_string(ScorerKind kind);
ScorerKind scorer_kind_from_string(const std::string& name);

// Prototype scorer

/// max_l cosine(project(x), c_l).
double proto_confidence(const Model& model, std::span<const double> x);

/// Descending sort, element at 1-based rank ceil(q * n).
double calibrate_threshold(std::vector<double> dev_scores, double q);

/// Nearest-prototype class name, or "OOD" when the confidence is below threshold.
std::string classify(const Model& model, std::span<const double> x, double threshold,
                     const std::vector<std::string>& ind_classes);

// Cross-entropy head for MSP / Energy

struct CeHead {
  Matrix weight;  // n_classes x feature_dim
  Vector bias;

  std::size_t n_classes() const { return weight.rows(); }
};

Vector head_logits(const CeHead& head, std::span<const double> x);

struct CeLoss {
  double value = 0.0;  // mean over the batch
  Matrix grad_weight;
  Vector grad_bias;
};

CeLoss ce_loss(const CeHead& head, const Matrix& features, std::span<const int> labels);

struct CeTrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-2;
  std::size_t batch_size = 20;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression trained with Adam on shuffled mini-batches.
CeHead train_ce_head(const Matrix& features, std::span<const int> labels,
                     std::size_t n_classes, const CeTrainConfig& config);

double msp_score(const CeHead& head, std::span<const double> x);
double msp_from_logits(std::span<const double> logits);

/// Negative energy, logsumexp of the logits.
double energy_score(const CeHead& head, std::span<const double> x);

// Gaussian discriminant analysis

struct GdaState {
  Matrix means;           // n_classes x dim
  Matrix precision;       // inverse of the regularized pooled covariance
  double regularization = 1e-3;
};

GdaState gda_fit(const Matrix& features, std::span<const int> labels, std::size_t n_classes,
                 double regularization = 1e-3);

/// Squared Mahalanobis distance of x to every class mean.
Vector gda_distances(const GdaState& state, std::span<const double> x);

/// -min_l Mahalanobis^2(x, mu_l).
double gda_score(const GdaState& state, std::span<const double> x);

// Local outlier factor

struct LofState {
  Matrix reference;
  std::size_t k = 0;
  Vector k_distance;
  Vector lrd;
};

/// Guards against division by zero in the local reachability density.
inline constexpr double kLofDensityEpsilon = 1e-10;

/// k = 0 selects min(20, n - 1).
LofState lof_fit(const Matrix& features, std::size_t k = 0);

double lof_factor(const LofState& state, std::span<const double> x);

/// -LOF(x).
double lof_score(const LofState& state, std::span<const double> x);

// Unified batch interface

struct ScoredBatch {
  std::vector<double> scores;
  std::vector<int> predicted;  // IND class index for the non-OOD decision
};

/// A fitted scorer of one family. LOF takes its class decision from the
/// CE head, as the detector itself carries no class information.
class ConfidenceScorer {
 public:
  static ConfidenceScorer proto(Model model);
  static ConfidenceScorer msp(CeHead head);
  static ConfidenceScorer energy(CeHead head);
  static ConfidenceScorer gda(GdaState state);
  static ConfidenceScorer lof(LofState state, CeHead head);

  ScorerKind kind() const { return kind_; }
  ScoredBatch score(const Matrix& x) const;

 private:
  struct LofWithHead {
    LofState lof;
    CeHead head;
  };

  ConfidenceScorer(ScorerKind kind, std::variant<Model, CeHead, GdaState, LofWithHead> state)
      : kind_(kind), state_(std::move(state)) {}

  ScorerKind kind_;
  std::variant<Model, CeHead, GdaState, LofWithHead> state_;
};

/// Labels for a scored batch: class name when score >= threshold, else "OOD".
std::vector<std::string> open_set_predictions(const ScoredBatch& scored, double threshold,
                                              const std::vector<std::string>& ind_classes);

}  // namespace appood
