#pragma once

// Helpers shared by the unit tests and the acceptance binary: random
// instances, finite-difference gradient checks and brute-force oracles
// written independently of the library code they check.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "appood/losses.hpp"
#include "appood/numerics.hpp"
#include "appood/scoring.hpp"

namespace testsupport {

using appood::Matrix;
using appood::Rng;
using appood::Vector;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("appood_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = scale * rng.normal();
  return m;
}

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline Vector concat(std::initializer_list<std::span<const double>> parts) {
  Vector out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

/// Copies x[offset, offset + m.size()) into m and returns the new offset.
inline std::size_t unpack(const Vector& x, std::size_t offset, Matrix& m) {
  std::copy(x.begin() + static_cast<std::ptrdiff_t>(offset),
            x.begin() + static_cast<std::ptrdiff_t>(offset + m.size()), m.flat().begin());
  return offset + m.size();
}

inline std::size_t unpack(const Vector& x, std::size_t offset, Vector& v) {
  std::copy(x.begin() + static_cast<std::ptrdiff_t>(offset),
            x.begin() + static_cast<std::ptrdiff_t>(offset + v.size()), v.begin());
  return offset + v.size();
}

/// ||a - b|| / max(||a||, ||b||), or the absolute error when both are ~0.
inline double relative_error(const Vector& a, const Vector& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

/// True when every sample's similarity profile keeps a clear gap between
/// the best and second-best prototype and between the best and the margin,
/// so a step of h cannot cross a hinge kink or switch the argmax.
inline bool smooth_margins(const Matrix& features, const Matrix& prototypes,
                           appood::SimilarityMode mode, double margin, double gap = 1e-3) {
  for (std::size_t i = 0; i < features.rows(); ++i) {
    std::vector<double> sims;
    for (std::size_t l = 0; l < prototypes.rows(); ++l) {
      sims.push_back(appood::similarity(mode, features.row(i), prototypes.row(l)));
    }
    std::sort(sims.begin(), sims.end(), std::greater<>());
    if (sims.size() > 1 && sims[0] - sims[1] < gap) return false;
    if (std::abs(sims[0] - margin) < gap) return false;
  }
  return true;
}

struct GradCase {
  std::string loss;
  double rel_error = 0.0;
};

/// Random labels over n_classes with at least one repeated label.
inline std::vector<int> labels_with_pair(Rng& rng, std::size_t batch, std::size_t n_classes) {
  std::vector<int> labels(batch);
  for (auto& y : labels) y = static_cast<int>(rng.below(n_classes));
  labels[1] = labels[0];
  return labels;
}

/// One randomized finite-difference check per loss family, all with
/// feature dim <= 8 and batch <= 6.
inline GradCase check_instance_instance(Rng& rng) {
  const std::size_t b = uniform_int(rng, 2, 6);
  const std::size_t d = uniform_int(rng, 2, 8);
  Matrix f = random_matrix(rng, b, d, 0.7);
  const auto labels = labels_with_pair(rng, b, uniform_int(rng, 1, 3));
  const auto out = appood::instance_instance_loss(f, labels);
  const Vector fd = appood::finite_diff_grad(
      [&](const Vector& x) {
        Matrix g(b, d);
        unpack(x, 0, g);
        return appood::instance_instance_loss(g, labels).value;
      },
      concat({f.flat()}));
  return {"instance_instance", relative_error(concat({out.grad_features.flat()}), fd)};
}

inline GradCase check_instance_prototype(Rng& rng) {
  const std::size_t b = uniform_int(rng, 1, 6);
  const std::size_t d = uniform_int(rng, 2, 8);
  const std::size_t n = uniform_int(rng, 2, 4);
  Matrix f = random_matrix(rng, b, d, 0.7);
  Matrix c = random_matrix(rng, n, d, 0.7);
  std::vector<int> labels(b);
  for (auto& y : labels) y = static_cast<int>(rng.below(n));
  const auto out = appood::instance_prototype_loss(f, labels, c);
  const Vector fd = appood::finite_diff_grad(
      [&](const Vector& x) {
        Matrix g(b, d);
        Matrix p(n, d);
        unpack(x, unpack(x, 0, g), p);
        return appood::instance_prototype_loss(g, labels, p).value;
      },
      concat({f.flat(), c.flat()}));
  return {"instance_prototype",
          relative_error(concat({out.grad_features.flat(), out.grad_prototypes.flat()}), fd)};
}

inline appood::SimilarityMode random_mode(Rng& rng) {
  return rng.below(2) == 0 ? appood::SimilarityMode::kDot : appood::SimilarityMode::kCosine;
}

inline GradCase check_margin(Rng& rng, bool ood) {
  while (true) {
    const std::size_t b = uniform_int(rng, 1, 6);
    const std::size_t d = uniform_int(rng, 2, 8);
    const std::size_t n = uniform_int(rng, 2, 4);
    appood::MarginConfig mc;
    mc.mode = random_mode(rng);
    // Margins inside the similarity range so the hinge is active for some samples.
    if (mc.mode == appood::SimilarityMode::kCosine) {
      mc.m_ood = 0.3 * rng.uniform();
      mc.m_ind = 0.5 + 0.4 * rng.uniform();
    }
    Matrix f = random_matrix(rng, b, d, 1.0);
    Matrix c = random_matrix(rng, n, d, 1.0);
    const double margin = ood ? mc.m_ood : mc.m_ind;
    if (!smooth_margins(f, c, mc.mode, margin)) continue;
    auto eval = [&](const Matrix& g, const Matrix& p) {
      return ood ? appood::ood_margin_loss(g, p, mc) : appood::ind_margin_loss(g, p, mc);
    };
    const auto out = eval(f, c);
    const Vector fd = appood::finite_diff_grad(
        [&](const Vector& x) {
          Matrix g(b, d);
          Matrix p(n, d);
          unpack(x, unpack(x, 0, g), p);
          return eval(g, p).value;
        },
        concat({f.flat(), c.flat()}));
    return {ood ? "ood_margin" : "ind_margin",
            relative_error(concat({out.grad_features.flat(), out.grad_prototypes.flat()}), fd)};
  }
}

inline GradCase check_ce(Rng& rng) {
  const std::size_t b = uniform_int(rng, 1, 6);
  const std::size_t d = uniform_int(rng, 2, 8);
  const std::size_t n = uniform_int(rng, 2, 4);
  appood::CeHead head{random_matrix(rng, n, d, 0.5), Vector(n)};
  for (double& v : head.bias) v = 0.5 * rng.normal();
  const Matrix x = random_matrix(rng, b, d, 1.0);
  std::vector<int> labels(b);
  for (auto& y : labels) y = static_cast<int>(rng.below(n));
  const auto out = appood::ce_loss(head, x, labels);
  const Vector fd = appood::finite_diff_grad(
      [&](const Vector& p) {
        appood::CeHead h{Matrix(n, d), Vector(n)};
        unpack(p, unpack(p, 0, h.weight), h.bias);
        return appood::ce_loss(h, x, labels).value;
      },
      concat({head.weight.flat(), head.bias}));
  return {"cross_entropy", relative_error(concat({out.grad_weight.flat(), out.grad_bias}), fd)};
}

inline GradCase check_stage2(Rng& rng) {
  while (true) {
    const std::size_t d = uniform_int(rng, 2, 8);
    const std::size_t n = uniform_int(rng, 2, 4);
    const std::size_t b_ind = uniform_int(rng, 2, 4);
    const std::size_t b_ood = uniform_int(rng, 1, 6 - b_ind);
    appood::MarginConfig mc;
    mc.mode = random_mode(rng);
    if (mc.mode == appood::SimilarityMode::kCosine) {
      mc.m_ood = 0.2;
      mc.m_ind = 0.8;
    }
    appood::LossWeights w{0.5 + rng.uniform(), 0.05 + rng.uniform(), 0.05 + rng.uniform()};
    Matrix fi = random_matrix(rng, b_ind, d, 1.0);
    Matrix fo = random_matrix(rng, b_ood, d, 1.0);
    Matrix c = random_matrix(rng, n, d, 1.0);
    std::vector<int> labels(b_ind);
    for (auto& y : labels) y = static_cast<int>(rng.below(n));
    std::vector<std::size_t> pseudo;
    for (std::size_t r = 0; r < b_ind; ++r) {
      if (rng.below(2) == 0) pseudo.push_back(r);
    }
    Matrix pseudo_feats = fi.gather_rows(pseudo);
    if (!smooth_margins(pseudo_feats, c, mc.mode, mc.m_ind) ||
        !smooth_margins(fo, c, mc.mode, mc.m_ood)) {
      continue;
    }
    auto eval = [&](const Matrix& a, const Matrix& o, const Matrix& p) {
      return appood::stage2_loss(appood::Stage2Batch{a, labels, pseudo, o}, p, w, mc);
    };
    const auto out = eval(fi, fo, c);
    const Vector fd = appood::finite_diff_grad(
        [&](const Vector& x) {
          Matrix a(b_ind, d);
          Matrix o(b_ood, d);
          Matrix p(n, d);
          unpack(x, unpack(x, unpack(x, 0, a), o), p);
          return eval(a, o, p).value;
        },
        concat({fi.flat(), fo.flat(), c.flat()}));
    return {"stage2",
            relative_error(concat({out.grad_ind_features.flat(), out.grad_ood_features.flat(),
                                   out.grad_prototypes.flat()}),
                           fd)};
  }
}

/// Local outlier factor by direct transcription of the textbook definition,
/// with neighbours chosen as the k closest by (distance, index).
inline double brute_force_lof(const std::vector<Vector>& ref, const Vector& query, std::size_t k) {
  auto dist = [](const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  // Neighbours of a point given by position (or the query when self < 0).
  auto neighbours = [&](const Vector& p, long self) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (static_cast<long>(j) == self) continue;
      order.emplace_back(dist(p, ref[j]), j);
    }
    std::sort(order.begin(), order.end());
    order.resize(k);
    return order;
  };
  auto k_distance = [&](std::size_t j) { return neighbours(ref[j], static_cast<long>(j)).back().first; };
  auto lrd = [&](const Vector& p, long self) {
    double sum = 0.0;
    for (const auto& [d, j] : neighbours(p, self)) sum += std::max(k_distance(j), d);
    return 1.0 / (sum / static_cast<double>(k) + appood::kLofDensityEpsilon);
  };
  double ratio = 0.0;
  for (const auto& [d, j] : neighbours(query, -1)) ratio += lrd(ref[j], static_cast<long>(j));
  return ratio / static_cast<double>(k) / lrd(query, -1);
}

/// S = T-th smallest and L = T-th largest after sorting (score, id) ascending.
inline std::pair<double, double> brute_force_thresholds(const std::vector<double>& scores,
                                                        const std::vector<std::string>& ids,
                                                        std::size_t t) {
  std::vector<std::pair<double, std::string>> v;
  for (std::size_t i = 0; i < scores.size(); ++i) v.emplace_back(scores[i], ids[i]);
  std::sort(v.begin(), v.end());
  return {v[t - 1].first, v[v.size() - t].first};
}

/// Element at 1-based rank ceil(3n/4) of the descending sort, integer arithmetic only.
inline double brute_force_quantile_75(std::vector<double> scores) {
  std::sort(scores.begin(), scores.end(), std::greater<>());
  const std::size_t n = scores.size();
  const std::size_t rank = (3 * n + 3) / 4;
  return scores[rank - 1];
}

}  // namespace testsupport
