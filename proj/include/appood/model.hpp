#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "appood/numerics.hpp"

namespace appood {

/// Similarity used by the margin losses and the pseudo-labeling scores.
/// Test-time confidence is always cosine.
enum class SimilarityMode { kDot, kCosine };

std::string to_string(SimilarityMode mode);
SimilarityMode similarity_mode_from_string(const std::string& name);

struct ProjectionLayer {
  Matrix weight;  // proto_dim x input_dim
  Vector bias;    // proto_dim
};

struct Model {
  ProjectionLayer projection;
  Matrix prototypes;  // n_classes x proto_dim, row order = task class order
  SimilarityMode mode = SimilarityMode::kDot;

  AdamState weight_opt;
  AdamState bias_opt;
  AdamState prototype_opt;

  std::uint64_t seed = 0;

  std::size_t input_dim() const { return projection.weight.cols(); }
  std::size_t proto_dim() const { return projection.weight.rows(); }
  std::size_t n_classes() const { return prototypes.rows(); }
};

/// Weights ~ N(0, 1/input_dim), bias 0, prototypes ~ N(0, 1/proto_dim).
Model init_model(std::size_t input_dim, std::size_t n_classes, std::size_t proto_dim,
                 std::uint64_t seed, SimilarityMode mode = SimilarityMode::kDot);

/// s = W x + b.
Vector project(const Model& model, std::span<const double> embedding);

double similarity(SimilarityMode mode, std::span<const double> feature,
                  std::span<const double> prototype);

inline double similarity(const Model& model, std::span<const double> feature,
                         std::span<const double> prototype) {
  return similarity(model.mode, feature, prototype);
}

/// Checkpoint file: a single JSON document with
///   format = "appood-checkpoint", version = 1, seed, similarity,
///   input_dim, proto_dim, n_classes, weight (row-major), bias, prototypes
///   (row-major) and the three Adam states {t, m, v}.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace appood
