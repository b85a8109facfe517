#pragma once

// Batch kernels used by training, pseudo-labeling and scoring. Each kernel
// has a serial reference and an OpenMP version. Every output element is
// computed by one thread with a fixed accumulation order, so both versions
// return bit-identical results for any thread count.

#include <vector>

#include "appood/model.hpp"
#include "appood/numerics.hpp"

namespace appood::kernels {

/// Best prototype per row: value and lowest index among ties.
struct MaxSimilarity {
  std::vector<double> score;
  std::vector<int> argmax;
};

namespace serial {

/// Rows of X (n x input_dim) through the affine projection -> n x proto_dim.
Matrix project_rows(const Model& model, const Matrix& x);

/// max_l sim(project(x_i), c_l) under `mode`.
MaxSimilarity max_similarity(const Model& model, const Matrix& x, SimilarityMode mode);

/// Full n x m squared Euclidean distance matrix between rows of a and b.
Matrix squared_distances(const Matrix& a, const Matrix& b);

}  // namespace serial

namespace omp {

Matrix project_rows(const Model& model, const Matrix& x);
MaxSimilarity max_similarity(const Model& model, const Matrix& x, SimilarityMode mode);
Matrix squared_distances(const Matrix& a, const Matrix& b);

}  // namespace omp

// Default dispatch used by library code.
inline Matrix project_rows(const Model& model, const Matrix& x) {
  return omp::project_rows(model, x);
}
inline MaxSimilarity max_similarity(const Model& model, const Matrix& x, SimilarityMode mode) {
  return omp::max_similarity(model, x, mode);
}
inline Matrix squared_distances(const Matrix& a, const Matrix& b) {
  return omp::squared_distances(a, b);
}

}  // namespace appood::kernels
