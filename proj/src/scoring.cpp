#include "appood/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "appood/data.hpp"
#include "appood/kernels.hpp"

namespace appood {

std::string to_string(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::kProto: return "proto";
    case ScorerKind::kMsp: return "msp";
    case ScorerKind::kEnergy: return "energy";
    case ScorerKind::kGda: return "gda";
    case ScorerKind::kLof: return "lof";
  }
  return "unknown";
}

ScorerKind scorer_kind_from_string(const std::string& name) {
  if (name == "proto") return ScorerKind::kProto;
  if (name == "msp") return ScorerKind::kMsp;
  if (name == "energy") return ScorerKind::kEnergy;
  if (name == "gda") return ScorerKind::kGda;
  if (name == "lof") return ScorerKind::kLof;
  throw std::invalid_argument("unknown scorer \"" + name + "\"");
}

double proto_confidence(const Model& model, std::span<const double> x) {
  const Vector s = project(model, x);
  double best = 0.0;
  for (std::size_t l = 0; l < model.n_classes(); ++l) {
    const double c = cosine(s, model.prototypes.row(l));
    if (l == 0 || c > best) best = c;
  }
  return best;
}

double calibrate_threshold(std::vector<double> dev_scores, double q) {
  if (dev_scores.empty()) throw NumericError("calibrate_threshold: no dev scores");
  if (!(q > 0.0 && q < 1.0)) throw NumericError("calibrate_threshold: q must lie in (0, 1)");
  std::stable_sort(dev_scores.begin(), dev_scores.end(), std::greater<>());
  const double n = static_cast<double>(dev_scores.size());
  // The relative slack keeps q * n from rounding up past an exact integer.
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-12 * n));
  rank = std::clamp<std::size_t>(rank, 1, dev_scores.size());
  return dev_scores[rank - 1];
}

std::string classify(const Model& model, std::span<const double> x, double threshold,
                     const std::vector<std::string>& ind_classes) {
  if (!std::isfinite(threshold)) throw NumericError("classify: threshold must be finite");
  if (ind_classes.size() != model.n_classes()) {
    throw NumericError("classify: class list does not match prototype count");
  }
  const Vector s = project(model, x);
  double best = 0.0;
  std::size_t arg = 0;
  for (std::size_t l = 0; l < model.n_classes(); ++l) {
    const double c = cosine(s, model.prototypes.row(l));
    if (l == 0 || c > best) {
      best = c;
      arg = l;
    }
  }
  return best >= threshold ? ind_classes[arg] : std::string(kOodLabel);
}

Vector head_logits(const CeHead& head, std::span<const double> x) {
  if (x.size() != head.weight.cols()) throw NumericError("head_logits: dimension mismatch");
  Vector logits(head.n_classes());
  for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = dot(head.weight.row(c), x) + head.bias[c];
  return logits;
}

CeLoss ce_loss(const CeHead& head, const Matrix& features, std::span<const int> labels) {
  if (labels.size() != features.rows()) throw NumericError("ce_loss: label count mismatch");
  if (features.rows() == 0) throw NumericError("ce_loss: empty batch");
  CeLoss out{0.0, Matrix(head.weight.rows(), head.weight.cols()), Vector(head.n_classes(), 0.0)};
  const double inv_b = 1.0 / static_cast<double>(features.rows());
  Vector probs(head.n_classes());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= head.n_classes()) {
      throw NumericError("ce_loss: label out of range");
    }
    auto x = features.row(i);
    const Vector logits = head_logits(head, x);
    const double lse = logsumexp(logits);
    out.value += (lse - logits[static_cast<std::size_t>(y)]) * inv_b;
    for (std::size_t c = 0; c < logits.size(); ++c) {
      const double g = (std::exp(logits[c] - lse) - (c == static_cast<std::size_t>(y) ? 1.0 : 0.0)) * inv_b;
      out.grad_bias[c] += g;
      auto gw = out.grad_weight.row(c);
      for (std::size_t k = 0; k < x.size(); ++k) gw[k] += g * x[k];
    }
  }
  return out;
}

CeHead train_ce_head(const Matrix& features, std::span<const int> labels,
                     std::size_t n_classes, const CeTrainConfig& config) {
  if (n_classes < 2) throw NumericError("train_ce_head: need at least 2 classes");
  if (features.rows() == 0 || labels.size() != features.rows()) {
    throw NumericError("train_ce_head: features and labels must be non-empty and aligned");
  }
  if (config.batch_size < 1 || config.epochs < 1) {
    throw NumericError("train_ce_head: epochs and batch size must be positive");
  }
  CeHead head{Matrix(n_classes, features.cols()), Vector(n_classes, 0.0)};
  AdamState w_opt(head.weight.size());
  AdamState b_opt(head.bias.size());

  std::vector<std::size_t> order(features.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 3000 + epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const Matrix batch = features.gather_rows(rows);
      std::vector<int> y;
      for (auto r : rows) y.push_back(labels[r]);
      const CeLoss loss = ce_loss(head, batch, y);
      if (!std::isfinite(loss.value)) throw std::runtime_error("train_ce_head: loss diverged");
      adam_step(w_opt, head.weight.flat(), loss.grad_weight.flat(), config.learning_rate);
      adam_step(b_opt, head.bias, loss.grad_bias, config.learning_rate);
    }
  }
  return head;
}

double msp_from_logits(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  const double mx = *std::max_element(logits.begin(), logits.end());
  return std::exp(mx - lse);
}

double msp_score(const CeHead& head, std::span<const double> x) {
  return msp_from_logits(head_logits(head, x));
}

double energy_score(const CeHead& head, std::span<const double> x) {
  return logsumexp(head_logits(head, x));
}

GdaState gda_fit(const Matrix& features, std::span<const int> labels, std::size_t n_classes,
                 double regularization) {
  if (regularization < 0.0) throw NumericError("gda_fit: regularization must be >= 0");
  if (labels.size() != features.rows() || features.rows() == 0) {
    throw NumericError("gda_fit: features and labels must be non-empty and aligned");
  }
  const std::size_t d = features.cols();
  GdaState st;
  st.regularization = regularization;
  st.means = Matrix(n_classes, d);
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || y >= n_classes) throw NumericError("gda_fit: label out of range");
    counts[y] += 1;
    auto mu = st.means.row(y);
    auto x = features.row(i);
    for (std::size_t k = 0; k < d; ++k) mu[k] += x[k];
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] < 2) throw NumericError("gda_fit: each class needs at least 2 samples");
    for (double& v : st.means.row(c)) v /= static_cast<double>(counts[c]);
  }

  Matrix cov(d, d);
  Vector diff(d);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto mu = st.means.row(static_cast<std::size_t>(labels[i]));
    auto x = features.row(i);
    for (std::size_t k = 0; k < d; ++k) diff[k] = x[k] - mu[k];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov(a, b) += diff[a] * diff[b];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(features.rows());
  double trace = 0.0;
  for (double& v : cov.flat()) v *= inv_n;
  for (std::size_t a = 0; a < d; ++a) trace += cov(a, a);
  const double ridge = regularization * trace / static_cast<double>(d);
  for (std::size_t a = 0; a < d; ++a) cov(a, a) += ridge;
  try {
    st.precision = spd_inverse(cov);
  } catch (const NumericError&) {
    throw NumericError("gda_fit: covariance is singular after regularization");
  }
  return st;
}

Vector gda_distances(const GdaState& state, std::span<const double> x) {
  const std::size_t d = state.means.cols();
  if (x.size() != d) throw NumericError("gda_distances: dimension mismatch");
  Vector out(state.means.rows());
  Vector diff(d);
  for (std::size_t c = 0; c < state.means.rows(); ++c) {
    auto mu = state.means.row(c);
    for (std::size_t k = 0; k < d; ++k) diff[k] = x[k] - mu[k];
    double acc = 0.0;
    for (std::size_t a = 0; a < d; ++a) acc += diff[a] * dot(state.precision.row(a), diff);
    out[c] = acc;
  }
  return out;
}

double gda_score(const GdaState& state, std::span<const double> x) {
  const Vector dist = gda_distances(state, x);
  return -*std::min_element(dist.begin(), dist.end());
}

namespace {

// k nearest rows by (distance, index), given a row of distances.
std::vector<std::size_t> nearest(std::span<const double> dist, std::size_t k,
                                 std::size_t exclude) {
  std::vector<std::size_t> idx;
  idx.reserve(dist.size());
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (j != exclude) idx.push_back(j);
  }
  auto cmp = [&](std::size_t a, std::size_t b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
  idx.resize(k);
  return idx;
}

double local_density(std::span<const double> dist, const std::vector<std::size_t>& neighbors,
                     const Vector& k_distance) {
  double reach = 0.0;
  for (auto o : neighbors) reach += std::max(k_distance[o], dist[o]);
  return 1.0 / (reach / static_cast<double>(neighbors.size()) + kLofDensityEpsilon);
}

constexpr std::size_t kNoExclude = static_cast<std::size_t>(-1);

}  // namespace

LofState lof_fit(const Matrix& features, std::size_t k) {
  const std::size_t n = features.rows();
  if (n < 2) throw NumericError("lof_fit: need at least 2 reference points");
  if (k == 0) k = std::min<std::size_t>(20, n - 1);
  if (k >= n) throw NumericError("lof_fit: k must be smaller than the reference count");

  Matrix dist = kernels::squared_distances(features, features);
  double max_d = 0.0;
  for (double& v : dist.flat()) {
    v = std::sqrt(v);
    max_d = std::max(max_d, v);
  }
  if (max_d == 0.0) throw NumericError("lof_fit: all reference points are identical");

  LofState st;
  st.reference = features;
  st.k = k;
  st.k_distance.resize(n);
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors[i] = nearest(dist.row(i), k, i);
    st.k_distance[i] = dist(i, neighbors[i].back());
  }
  st.lrd.resize(n);
  for (std::size_t i = 0; i < n; ++i) st.lrd[i] = local_density(dist.row(i), neighbors[i], st.k_distance);
  return st;
}

namespace {

double lof_from_distances(const LofState& state, std::span<const double> dist) {
  const auto neighbors = nearest(dist, state.k, kNoExclude);
  const double lrd_x = local_density(dist, neighbors, state.k_distance);
  double acc = 0.0;
  for (auto o : neighbors) acc += state.lrd[o];
  return acc / static_cast<double>(neighbors.size()) / lrd_x;
}

}  // namespace

double lof_factor(const LofState& state, std::span<const double> x) {
  if (x.size() != state.reference.cols()) throw NumericError("lof_factor: dimension mismatch");
  Vector dist(state.reference.rows());
  for (std::size_t j = 0; j < dist.size(); ++j) {
    double acc = 0.0;
    auto r = state.reference.row(j);
    for (std::size_t k = 0; k < x.size(); ++k) acc += (x[k] - r[k]) * (x[k] - r[k]);
    dist[j] = std::sqrt(acc);
  }
  return lof_from_distances(state, dist);
}

double lof_score(const LofState& state, std::span<const double> x) { return -lof_factor(state, x); }

ConfidenceScorer ConfidenceScorer::proto(Model model) {
  return ConfidenceScorer(ScorerKind::kProto, std::move(model));
}
ConfidenceScorer ConfidenceScorer::msp(CeHead head) {
  return ConfidenceScorer(ScorerKind::kMsp, std::move(head));
}
ConfidenceScorer ConfidenceScorer::energy(CeHead head) {
  return ConfidenceScorer(ScorerKind::kEnergy, std::move(head));
}
ConfidenceScorer ConfidenceScorer::gda(GdaState state) {
  return ConfidenceScorer(ScorerKind::kGda, std::move(state));
}
ConfidenceScorer ConfidenceScorer::lof(LofState state, CeHead head) {
  return ConfidenceScorer(ScorerKind::kLof, LofWithHead{std::move(state), std::move(head)});
}

namespace {

int argmax_index(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

ScoredBatch ConfidenceScorer::score(const Matrix& x) const {
  ScoredBatch out;
  const std::size_t n = x.rows();
  out.scores.resize(n);
  out.predicted.resize(n);
  switch (kind_) {
    case ScorerKind::kProto: {
      const auto& model = std::get<Model>(state_);
      auto best = kernels::max_similarity(model, x, SimilarityMode::kCosine);
      out.scores = std::move(best.score);
      out.predicted = std::move(best.argmax);
      break;
    }
    case ScorerKind::kMsp:
    case ScorerKind::kEnergy: {
      const auto& head = std::get<CeHead>(state_);
      for (std::size_t i = 0; i < n; ++i) {
        const Vector logits = head_logits(head, x.row(i));
        out.scores[i] = kind_ == ScorerKind::kMsp ? msp_from_logits(logits) : logsumexp(logits);
        out.predicted[i] = argmax_index(logits);
      }
      break;
    }
    case ScorerKind::kGda: {
      const auto& st = std::get<GdaState>(state_);
      for (std::size_t i = 0; i < n; ++i) {
        const Vector dist = gda_distances(st, x.row(i));
        const auto it = std::min_element(dist.begin(), dist.end());
        out.scores[i] = -*it;
        out.predicted[i] = static_cast<int>(it - dist.begin());
      }
      break;
    }
    case ScorerKind::kLof: {
      const auto& st = std::get<LofWithHead>(state_);
      Matrix dist = kernels::squared_distances(x, st.lof.reference);
      for (double& v : dist.flat()) v = std::sqrt(v);
      for (std::size_t i = 0; i < n; ++i) {
        out.scores[i] = -lof_from_distances(st.lof, dist.row(i));
        out.predicted[i] = argmax_index(head_logits(st.head, x.row(i)));
      }
      break;
    }
  }
  return out;
}

std::vector<std::string> open_set_predictions(const ScoredBatch& scored, double threshold,
                                              const std::vector<std::string>& ind_classes) {
  std::vector<std::string> out;
  out.reserve(scored.scores.size());
  for (std::size_t i = 0; i < scored.scores.size(); ++i) {
    if (scored.scores[i] >= threshold) {
      out.push_back(ind_classes.at(static_cast<std::size_t>(scored.predicted[i])));
    } else {
      out.emplace_back(kOodLabel);
    }
  }
  return out;
}

}  // namespace appood
