#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace appood {

using Vector = std::vector<double>;

/// Raised when an argument violates a documented precondition
/// (shape mismatch, empty input, non-finite value).
class NumericError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  /// Rows selected by index, in the given order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  void fill(double value);
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Cosine similarity clamped to [-1, 1]. Throws on zero-norm input.
double cosine(std::span<const double> a, std::span<const double> b);

/// log(sum(exp(x))) with max-shift. Throws on empty input.
double logsumexp(std::span<const double> logits);

/// Softmax written into `out` (same length as `logits`).
void softmax(std::span<const double> logits, std::span<double> out);

void require_finite(std::span<const double> values, const std::string& what);

/// Symmetric positive definite inverse via Cholesky. Throws NumericError
/// if the matrix is not SPD to working precision.
Matrix spd_inverse(const Matrix& a);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one parameter tensor.
struct AdamState {
  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  Vector m;
  Vector v;
  std::uint64_t t = 0;
  AdamHyper hyper;
};

/// One bias-corrected Adam update, in place. Increments state.t.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               double learning_rate);

/// Central-difference gradient of f at x.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                        double h = 1e-5);

/// xoshiro256** seeded through splitmix64. Every random draw in the
/// library goes through this type so results do not depend on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal (Box-Muller, one cached spare).
  double normal();

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derive an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace appood
