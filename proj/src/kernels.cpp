#include "appood/kernels.hpp"

#include <cstdint>

namespace appood::kernels {

namespace {

void check_input(const Model& model, const Matrix& x) {
  if (!x.empty() && x.cols() != model.input_dim()) {
    throw NumericError("kernels: embedding dimension " + std::to_string(x.cols()) +
                       " does not match model input dimension " +
                       std::to_string(model.input_dim()));
  }
}

inline void project_one(const Model& model, std::span<const double> x, std::span<double> out) {
  const auto& w = model.projection.weight;
  for (std::size_t p = 0; p < w.rows(); ++p) {
    auto wr = w.row(p);
    double acc = 0.0;
    for (std::size_t q = 0; q < wr.size(); ++q) acc += wr[q] * x[q];
    out[p] = acc + model.projection.bias[p];
  }
}

inline void best_prototype(const Model& model, std::span<const double> s, SimilarityMode mode,
                           double& score, int& argmax) {
  score = 0.0;
  argmax = -1;
  for (std::size_t l = 0; l < model.prototypes.rows(); ++l) {
    const double sim = similarity(mode, s, model.prototypes.row(l));
    if (argmax < 0 || sim > score) {
      score = sim;
      argmax = static_cast<int>(l);
    }
  }
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void check_pair(const Matrix& a, const Matrix& b) {
  if (!a.empty() && !b.empty() && a.cols() != b.cols()) {
    throw NumericError("squared_distances: dimension mismatch");
  }
}

}  // namespace

namespace serial {

Matrix project_rows(const Model& model, const Matrix& x) {
  check_input(model, x);
  Matrix out(x.rows(), model.proto_dim());
  for (std::size_t i = 0; i < x.rows(); ++i) project_one(model, x.row(i), out.row(i));
  return out;
}

MaxSimilarity max_similarity(const Model& model, const Matrix& x, SimilarityMode mode) {
  check_input(model, x);
  MaxSimilarity out{std::vector<double>(x.rows()), std::vector<int>(x.rows())};
  Vector s(model.proto_dim());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    project_one(model, x.row(i), s);
    best_prototype(model, s, mode, out.score[i], out.argmax[i]);
  }
  return out;
}

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = sq_dist(a.row(i), b.row(j));
  }
  return out;
}

}  // namespace serial

namespace omp {

Matrix project_rows(const Model& model, const Matrix& x) {
  check_input(model, x);
  Matrix out(x.rows(), model.proto_dim());
  const auto n = static_cast<std::int64_t>(x.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    project_one(model, x.row(r), out.row(r));
  }
  return out;
}

MaxSimilarity max_similarity(const Model& model, const Matrix& x, SimilarityMode mode) {
  check_input(model, x);
  MaxSimilarity out{std::vector<double>(x.rows()), std::vector<int>(x.rows())};
  const auto n = static_cast<std::int64_t>(x.rows());
  // Exceptions cannot cross the parallel region; record the first failure.
  bool failed = false;
#pragma omp parallel
  {
    Vector s(model.proto_dim());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const auto r = static_cast<std::size_t>(i);
      project_one(model, x.row(r), s);
      try {
        best_prototype(model, s, mode, out.score[r], out.argmax[r]);
      } catch (const NumericError&) {
#pragma omp atomic write
        failed = true;
      }
    }
  }
  if (failed) throw NumericError("max_similarity: zero-norm feature or prototype in cosine mode");
  return out;
}

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  Matrix out(a.rows(), b.rows());
  const auto n = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(r, j) = sq_dist(a.row(r), b.row(j));
  }
  return out;
}

}  // namespace omp

}  // namespace appood::kernels
