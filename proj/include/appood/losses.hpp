#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "appood/model.hpp"
#include "appood/numerics.hpp"

namespace appood {

/// Loss value with gradients w.r.t. the projected features and prototypes.
struct LossOutput {
  double value = 0.0;
  Matrix grad_features;    // same shape as the feature batch
  Matrix grad_prototypes;  // same shape as the prototype matrix
  std::size_t terms = 0;   // anchors / samples that contributed
};

struct LossWeights {
  double pcl = 1.0;
  double ind = 0.05;
  double ood = 0.05;
};

struct MarginConfig {
  double m_ind = 2.8;
  double m_ood = 1.1;
  SimilarityMode mode = SimilarityMode::kDot;
  /// Take max over prototypes of (M_IND - sim), i.e. the least similar
  /// prototype, instead of M_IND - max sim.
  bool ind_margin_literal = false;
};

/// Supervised contrastive loss over raw dot products. Anchors without a
/// same-class partner in the batch contribute nothing. Summed over anchors.
LossOutput instance_instance_loss(const Matrix& features, std::span<const int> labels);

/// Softmax cross-entropy of s_i . c_j against the sample's own prototype,
/// summed over the batch.
LossOutput instance_prototype_loss(const Matrix& features, std::span<const int> labels,
                                   const Matrix& prototypes);

/// Mean of max(0, max_l sim(s_i, c_l) - M_OOD).
LossOutput ood_margin_loss(const Matrix& features, const Matrix& prototypes,
                           const MarginConfig& margins);

/// Mean of max(0, M_IND - max_l sim(s_i, c_l)).
LossOutput ind_margin_loss(const Matrix& features, const Matrix& prototypes,
                           const MarginConfig& margins);

/// instance_instance_loss + instance_prototype_loss.
LossOutput pcl_loss(const Matrix& features, std::span<const int> labels,
                    const Matrix& prototypes);

/// One stage-2 batch: IND-pool features (gold and pseudo labels), the rows
/// of that pool that carry pseudo labels, and pseudo-OOD features.
struct Stage2Batch {
  const Matrix& ind_features;
  std::span<const int> ind_labels;
  std::span<const std::size_t> pseudo_ind_rows;
  const Matrix& ood_features;
};

struct Stage2Output {
  double value = 0.0;
  double pcl = 0.0;  // unweighted components
  double ind = 0.0;
  double ood = 0.0;
  Matrix grad_ind_features;
  Matrix grad_ood_features;
  Matrix grad_prototypes;
};

/// weights.pcl * L_pcl + weights.ind * L_ind + weights.ood * L_ood. The
/// contrastive term needs at least two IND-pool rows and is skipped otherwise.
Stage2Output stage2_loss(const Stage2Batch& batch, const Matrix& prototypes,
                         const LossWeights& weights, const MarginConfig& margins);

/// Gradients w.r.t. every trainable parameter of a Model.
struct ParameterGradients {
  Matrix weight;
  Vector bias;
  Matrix prototypes;

  static ParameterGradients zeros_like(const Model& model);
};

/// Accumulate dL/dW and dL/db for features produced as W x + b from `inputs`.
void chain_projection(const Matrix& inputs, const Matrix& grad_features,
                      ParameterGradients& grads);

}  // namespace appood
