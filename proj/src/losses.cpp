#include "appood/losses.hpp"

#include <cmath>
#include <string>

namespace appood {

namespace {

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t n_classes,
                  const char* who) {
  if (labels.size() != rows) {
    throw NumericError(std::string(who) + ": label count does not match batch size");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw NumericError(std::string(who) + ": label " + std::to_string(y) +
                         " has no prototype row");
    }
  }
}

void check_prototypes(const Matrix& features, const Matrix& prototypes, const char* who) {
  if (prototypes.rows() == 0) throw NumericError(std::string(who) + ": no prototypes");
  if (!features.empty() && features.cols() != prototypes.cols()) {
    throw NumericError(std::string(who) + ": feature and prototype dimensions differ");
  }
}

// axpy on spans: y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// Adds scale * d sim(s, c) / ds to gs and scale * d sim(s, c) / dc to gc.
void add_similarity_grad(SimilarityMode mode, std::span<const double> s,
                         std::span<const double> c, double scale, std::span<double> gs,
                         std::span<double> gc) {
  if (mode == SimilarityMode::kDot) {
    axpy(scale, c, gs);
    axpy(scale, s, gc);
    return;
  }
  const double ns = norm(s);
  const double nc = norm(c);
  if (ns == 0.0 || nc == 0.0) throw NumericError("cosine similarity gradient: zero-norm input");
  const double cos = dot(s, c) / (ns * nc);
  const double inv = 1.0 / (ns * nc);
  for (std::size_t k = 0; k < s.size(); ++k) {
    gs[k] += scale * (c[k] * inv - cos * s[k] / (ns * ns));
    gc[k] += scale * (s[k] * inv - cos * c[k] / (nc * nc));
  }
}

enum class Pick { kMax, kMin };

// Index of the max (or min) similarity prototype; ties to the lowest index.
std::size_t pick_prototype(SimilarityMode mode, std::span<const double> s,
                           const Matrix& prototypes, Pick pick, double& best) {
  std::size_t arg = 0;
  best = similarity(mode, s, prototypes.row(0));
  for (std::size_t l = 1; l < prototypes.rows(); ++l) {
    const double sim = similarity(mode, s, prototypes.row(l));
    if ((pick == Pick::kMax && sim > best) || (pick == Pick::kMin && sim < best)) {
      best = sim;
      arg = l;
    }
  }
  return arg;
}

}  // namespace

LossOutput instance_instance_loss(const Matrix& features, std::span<const int> labels) {
  const std::size_t b = features.rows();
  if (b < 2) throw NumericError("instance_instance_loss: batch size must be >= 2");
  if (labels.size() != b) {
    throw NumericError("instance_instance_loss: label count does not match batch size");
  }

  LossOutput out;
  out.grad_features = Matrix(b, features.cols());

  Matrix gram(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i; j < b; ++j) {
      gram(i, j) = gram(j, i) = dot(features.row(i), features.row(j));
    }
  }

  Vector logits;
  Vector probs;
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t n_pos = 0;
    for (std::size_t j = 0; j < b; ++j) n_pos += (j != i && labels[j] == labels[i]) ? 1 : 0;
    if (n_pos == 0) continue;

    others.clear();
    logits.clear();
    for (std::size_t k = 0; k < b; ++k) {
      if (k == i) continue;
      others.push_back(k);
      logits.push_back(gram(i, k));
    }
    probs.resize(logits.size());
    const double lse = logsumexp(logits);
    for (std::size_t t = 0; t < logits.size(); ++t) probs[t] = std::exp(logits[t] - lse);

    const double inv_pos = 1.0 / static_cast<double>(n_pos);
    double pos_mean = 0.0;
    for (std::size_t t = 0; t < others.size(); ++t) {
      const std::size_t k = others[t];
      const bool positive = labels[k] == labels[i];
      if (positive) pos_mean += logits[t];
      const double coeff = probs[t] - (positive ? inv_pos : 0.0);
      // d/ds_i and d/ds_k of the logit s_i . s_k
      axpy(coeff, features.row(k), out.grad_features.row(i));
      axpy(coeff, features.row(i), out.grad_features.row(k));
    }
    out.value += lse - pos_mean * inv_pos;
    ++out.terms;
  }
  return out;
}

LossOutput instance_prototype_loss(const Matrix& features, std::span<const int> labels,
                                   const Matrix& prototypes) {
  check_prototypes(features, prototypes, "instance_prototype_loss");
  check_labels(labels, features.rows(), prototypes.rows(), "instance_prototype_loss");

  LossOutput out;
  out.grad_features = Matrix(features.rows(), features.cols());
  out.grad_prototypes = Matrix(prototypes.rows(), prototypes.cols());

  const std::size_t n = prototypes.rows();
  Vector logits(n);
  Vector probs(n);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto s = features.row(i);
    for (std::size_t j = 0; j < n; ++j) logits[j] = dot(s, prototypes.row(j));
    const double lse = logsumexp(logits);
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value += lse - logits[y];
    for (std::size_t j = 0; j < n; ++j) {
      probs[j] = std::exp(logits[j] - lse);
      const double coeff = probs[j] - (j == y ? 1.0 : 0.0);
      axpy(coeff, prototypes.row(j), out.grad_features.row(i));
      axpy(coeff, s, out.grad_prototypes.row(j));
    }
    ++out.terms;
  }
  return out;
}

LossOutput ood_margin_loss(const Matrix& features, const Matrix& prototypes,
                           const MarginConfig& margins) {
  check_prototypes(features, prototypes, "ood_margin_loss");
  LossOutput out;
  out.grad_features = Matrix(features.rows(), features.cols());
  out.grad_prototypes = Matrix(prototypes.rows(), prototypes.cols());
  if (features.rows() == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    double best = 0.0;
    const std::size_t l = pick_prototype(margins.mode, features.row(i), prototypes, Pick::kMax, best);
    const double hinge = best - margins.m_ood;
    if (hinge > 0.0) {
      out.value += hinge;
      add_similarity_grad(margins.mode, features.row(i), prototypes.row(l), inv_n,
                          out.grad_features.row(i), out.grad_prototypes.row(l));
    }
  }
  out.value *= inv_n;
  out.terms = features.rows();
  return out;
}

LossOutput ind_margin_loss(const Matrix& features, const Matrix& prototypes,
                           const MarginConfig& margins) {
  check_prototypes(features, prototypes, "ind_margin_loss");
  LossOutput out;
  out.grad_features = Matrix(features.rows(), features.cols());
  out.grad_prototypes = Matrix(prototypes.rows(), prototypes.cols());
  if (features.rows() == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(features.rows());
  const Pick pick = margins.ind_margin_literal ? Pick::kMin : Pick::kMax;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    double sim = 0.0;
    const std::size_t l = pick_prototype(margins.mode, features.row(i), prototypes, pick, sim);
    const double hinge = margins.m_ind - sim;
    if (hinge > 0.0) {
      out.value += hinge;
      add_similarity_grad(margins.mode, features.row(i), prototypes.row(l), -inv_n,
                          out.grad_features.row(i), out.grad_prototypes.row(l));
    }
  }
  out.value *= inv_n;
  out.terms = features.rows();
  return out;
}

LossOutput pcl_loss(const Matrix& features, std::span<const int> labels,
                    const Matrix& prototypes) {
  LossOutput proto = instance_prototype_loss(features, labels, prototypes);
  const LossOutput ins = instance_instance_loss(features, labels);
  proto.value = ins.value + proto.value;
  for (std::size_t i = 0; i < proto.grad_features.size(); ++i) {
    proto.grad_features.flat()[i] = ins.grad_features.flat()[i] + proto.grad_features.flat()[i];
  }
  proto.terms += ins.terms;
  return proto;
}

Stage2Output stage2_loss(const Stage2Batch& batch, const Matrix& prototypes,
                         const LossWeights& weights, const MarginConfig& margins) {
  if (weights.pcl < 0.0 || weights.ind < 0.0 || weights.ood < 0.0) {
    throw NumericError("stage2_loss: loss weights must be non-negative");
  }
  const Matrix& ind = batch.ind_features;
  Stage2Output out;
  out.grad_ind_features = Matrix(ind.rows(), prototypes.cols());
  out.grad_ood_features = Matrix(batch.ood_features.rows(), prototypes.cols());
  out.grad_prototypes = Matrix(prototypes.rows(), prototypes.cols());

  auto scaled_add = [](double w, const Matrix& src, Matrix& dst) {
    for (std::size_t i = 0; i < src.size(); ++i) dst.flat()[i] += w * src.flat()[i];
  };

  if (ind.rows() > 0) {
    const LossOutput pcl = ind.rows() >= 2 ? pcl_loss(ind, batch.ind_labels, prototypes)
                                           : instance_prototype_loss(ind, batch.ind_labels, prototypes);
    out.pcl = pcl.value;
    scaled_add(weights.pcl, pcl.grad_features, out.grad_ind_features);
    scaled_add(weights.pcl, pcl.grad_prototypes, out.grad_prototypes);
  }
  out.value = weights.pcl * out.pcl;

  if (!batch.pseudo_ind_rows.empty()) {
    const Matrix pseudo = ind.gather_rows(batch.pseudo_ind_rows);
    const LossOutput l_ind = ind_margin_loss(pseudo, prototypes, margins);
    out.ind = l_ind.value;
    out.value += weights.ind * l_ind.value;
    for (std::size_t r = 0; r < batch.pseudo_ind_rows.size(); ++r) {
      axpy(weights.ind, l_ind.grad_features.row(r),
           out.grad_ind_features.row(batch.pseudo_ind_rows[r]));
    }
    scaled_add(weights.ind, l_ind.grad_prototypes, out.grad_prototypes);
  }

  if (batch.ood_features.rows() > 0) {
    const LossOutput l_ood = ood_margin_loss(batch.ood_features, prototypes, margins);
    out.ood = l_ood.value;
    out.value += weights.ood * l_ood.value;
    scaled_add(weights.ood, l_ood.grad_features, out.grad_ood_features);
    scaled_add(weights.ood, l_ood.grad_prototypes, out.grad_prototypes);
  }
  return out;
}

ParameterGradients ParameterGradients::zeros_like(const Model& model) {
  return ParameterGradients{Matrix(model.proto_dim(), model.input_dim()),
                            Vector(model.proto_dim(), 0.0),
                            Matrix(model.n_classes(), model.proto_dim())};
}

void chain_projection(const Matrix& inputs, const Matrix& grad_features,
                      ParameterGradients& grads) {
  if (inputs.rows() != grad_features.rows()) {
    throw NumericError("chain_projection: batch sizes differ");
  }
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    auto x = inputs.row(i);
    auto g = grad_features.row(i);
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (g[p] == 0.0) continue;
      axpy(g[p], x, grads.weight.row(p));
      grads.bias[p] += g[p];
    }
  }
}

}  // namespace appood
