#include "appood/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace appood {

void TrainConfig::validate() const {
  if (pretrain_epochs < 1) throw ConfigError("pretrain_epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(lr_projection > 0.0) || !(lr_prototypes > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (threshold_rank < 1) throw ConfigError("threshold_rank must be >= 1");
  if (!(dev_quantile > 0.0 && dev_quantile < 1.0)) throw ConfigError("dev_quantile must lie in (0, 1)");
  if (weights.pcl < 0.0 || weights.ind < 0.0 || weights.ood < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!std::isfinite(margins.m_ind) || !std::isfinite(margins.m_ood)) {
    throw ConfigError("margins must be finite");
  }
  if (proto_dim < 1) throw ConfigError("proto_dim must be >= 1");
}

namespace {

void check_loss(double value, const TrainConfig& config, const char* stage, std::size_t epoch) {
  if (!std::isfinite(value) || value > config.divergence_limit) {
    throw TrainingError(std::string(stage) + " diverged at epoch " + std::to_string(epoch) +
                        ": batch loss " + std::to_string(value));
  }
}

void apply_gradients(Model& model, const ParameterGradients& grads, const TrainConfig& config) {
  adam_step(model.weight_opt, model.projection.weight.flat(), grads.weight.flat(),
            config.lr_projection);
  adam_step(model.bias_opt, model.projection.bias, grads.bias, config.lr_projection);
  adam_step(model.prototype_opt, model.prototypes.flat(), grads.prototypes.flat(),
            config.lr_prototypes);
}

// Consecutive slices of `order` of at most batch_size; a trailing singleton
// is folded into the previous batch so every batch has >= 2 rows.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(start, std::min(n, start + batch_size));
  }
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

std::vector<std::size_t> iota_vec(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

void pretrain_in_place(Model& model, const TrainingData& data, const TrainConfig& config) {
  config.validate();
  const auto& labeled = data.labeled;
  if (labeled.size() < 2) throw TrainingError("pretrain: need at least 2 labeled examples");
  if (data.ind_classes.size() < 2) throw TrainingError("pretrain: need at least 2 IND classes");
  if (model.n_classes() != data.ind_classes.size()) {
    throw TrainingError("pretrain: model prototype count does not match IND class count");
  }

  std::vector<std::size_t> order = iota_vec(labeled.size());
  for (std::size_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 500 + epoch));
    rng.shuffle(order);
    for (auto [begin, end] : batch_bounds(order.size(), config.batch_size)) {
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Matrix inputs = labeled.embeddings.gather_rows(rows);
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(labeled.labels[r]);

      const Matrix features = kernels::project_rows(model, inputs);
      const LossOutput loss = pcl_loss(features, labels, model.prototypes);
      check_loss(loss.value, config, "pretrain", epoch);

      ParameterGradients grads = ParameterGradients::zeros_like(model);
      chain_projection(inputs, loss.grad_features, grads);
      grads.prototypes = loss.grad_prototypes;
      apply_gradients(model, grads, config);
    }
  }
}

Model pretrain(const TrainingData& data, const TrainConfig& config) {
  config.validate();
  if (data.labeled.size() == 0) throw TrainingError("pretrain: labeled set is empty");
  Model model = init_model(data.labeled.embeddings.cols(), data.ind_classes.size(),
                           config.proto_dim, config.seed, config.margins.mode);
  pretrain_in_place(model, data, config);
  return model;
}

Thresholds thresholds_from_scores(const std::vector<double>& scores,
                                  const std::vector<std::string>& ids, std::size_t rank) {
  if (scores.size() != ids.size()) throw TrainingError("thresholds: scores and ids differ in length");
  if (rank < 1) throw ConfigError("threshold rank must be >= 1");
  const std::size_t m = scores.size();
  if (m < 2 * rank) {
    throw TrainingError("thresholds: " + std::to_string(m) + " unlabeled examples, need at least " +
                        std::to_string(2 * rank));
  }
  std::vector<std::size_t> order = iota_vec(m);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return ids[a] < ids[b];
  });
  Thresholds t{scores[order[rank - 1]], scores[order[m - rank]]};
  if (!(t.lower < t.upper)) {
    throw TrainingError("thresholds: degenerate score spread (S = " + std::to_string(t.lower) +
                        ", L = " + std::to_string(t.upper) + ")");
  }
  return t;
}

Thresholds compute_thresholds(const Model& model, const UnlabeledSet& unlabeled,
                              std::size_t rank, SimilarityMode mode) {
  const auto scored = kernels::max_similarity(model, unlabeled.embeddings, mode);
  return thresholds_from_scores(scored.score, unlabeled.ids, rank);
}

PseudoPartition partition_from_scores(const kernels::MaxSimilarity& scored,
                                      const std::vector<std::string>& ids,
                                      const Thresholds& thresholds, std::size_t epoch) {
  if (scored.score.size() != ids.size()) {
    throw TrainingError("partition: scores and ids differ in length");
  }
  PseudoPartition p;
  p.epoch = epoch;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double s = scored.score[i];
    if (s > thresholds.upper) {
      p.ind_rows.push_back(i);
      p.ind_classes.push_back(scored.argmax[i]);
      p.ind_ids.push_back(ids[i]);
    } else if (s < thresholds.lower) {
      p.ood_rows.push_back(i);
      p.ood_ids.push_back(ids[i]);
    } else {
      p.abstain_rows.push_back(i);
      p.abstain_ids.push_back(ids[i]);
    }
  }
  return p;
}

PseudoPartition assign_pseudo_labels(const Model& model, const UnlabeledSet& unlabeled,
                                     const Thresholds& thresholds, std::size_t epoch,
                                     SimilarityMode mode) {
  const auto scored = kernels::max_similarity(model, unlabeled.embeddings, mode);
  return partition_from_scores(scored, unlabeled.ids, thresholds, epoch);
}

namespace {

void audit_epoch(const Model& model, const TrainingData& data, const PseudoPartition& partition,
                 const AuditSource& audit, EpochLog& entry) {
  const auto& gold = *audit.unlabeled_gold;
  const auto& classes = audit.ind_classes ? *audit.ind_classes : data.ind_classes;
  LabelMap gold_map;
  for (std::size_t i = 0; i < gold.size(); ++i) gold_map.emplace(data.unlabeled.ids[i], gold[i]);
  entry.audit = pseudo_label_audit(partition, gold_map, classes);

  const std::set<std::string> ind(classes.begin(), classes.end());
  const auto conf = kernels::max_similarity(model, data.unlabeled.embeddings, SimilarityMode::kCosine);
  std::vector<double> ind_scores;
  std::vector<double> ood_scores;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    (ind.count(gold[i]) ? ind_scores : ood_scores).push_back(conf.score[i]);
  }
  if (!ind_scores.empty() && !ood_scores.empty()) {
    entry.separation = separation_stat(ind_scores, ood_scores);
    auto hist = score_histogram(ind_scores, ood_scores, audit.histogram_bins);
    hist.epoch = entry.epoch;
    entry.histogram = std::move(hist);
  }
}

}  // namespace

SelfTrainResult self_train(Model model, const TrainingData& data, const Thresholds& thresholds,
                           const TrainConfig& config, const AuditSource& audit,
                           const EpochHook& on_epoch) {
  config.validate();
  if (!(thresholds.lower < thresholds.upper)) throw TrainingError("self_train: thresholds require S < L");
  if (audit.unlabeled_gold && audit.unlabeled_gold->size() != data.unlabeled.size()) {
    throw TrainingError("self_train: audit labels do not align with the unlabeled pool");
  }

  SelfTrainResult result{std::move(model), {}, std::nullopt};
  Model& m = result.model;
  const auto& labeled = data.labeled;
  const auto& unlabeled = data.unlabeled;

  for (std::size_t epoch = 1; epoch <= config.selftrain_epochs; ++epoch) {
    PseudoPartition partition = assign_pseudo_labels(m, unlabeled, thresholds, epoch,
                                                     config.pseudo_label_mode);

    // IND pool: gold-labeled rows first, then pseudo-IND rows.
    const std::size_t n_gold = labeled.size();
    const std::size_t n_ind = n_gold + partition.ind_rows.size();
    const std::size_t n_ood = partition.ood_rows.size();
    if (n_ind == 0 && n_ood == 0) throw TrainingError("self_train: empty stage-2 pool");

    Rng rng(derive_seed(config.seed, 1000 + epoch));
    std::vector<std::size_t> ind_order = iota_vec(n_ind);
    std::vector<std::size_t> ood_order = iota_vec(n_ood);
    rng.shuffle(ind_order);
    rng.shuffle(ood_order);

    const std::size_t n_batches = (n_ind + n_ood + config.batch_size - 1) / config.batch_size;
    EpochLog entry;
    entry.epoch = epoch;
    entry.pseudo_ind = partition.ind_rows.size();
    entry.pseudo_ood = n_ood;
    entry.abstain = partition.abstain_rows.size();

    const std::size_t in_dim = m.input_dim();
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t ind_begin = b * n_ind / n_batches;
      const std::size_t ind_end = (b + 1) * n_ind / n_batches;
      const std::size_t ood_begin = b * n_ood / n_batches;
      const std::size_t ood_end = (b + 1) * n_ood / n_batches;

      Matrix ind_inputs(ind_end - ind_begin, in_dim);
      std::vector<int> ind_labels;
      std::vector<std::size_t> pseudo_rows;
      for (std::size_t t = ind_begin; t < ind_end; ++t) {
        const std::size_t pool_row = ind_order[t];
        const std::size_t r = t - ind_begin;
        if (pool_row < n_gold) {
          auto src = labeled.embeddings.row(pool_row);
          std::copy(src.begin(), src.end(), ind_inputs.row(r).begin());
          ind_labels.push_back(labeled.labels[pool_row]);
        } else {
          const std::size_t k = pool_row - n_gold;
          auto src = unlabeled.embeddings.row(partition.ind_rows[k]);
          std::copy(src.begin(), src.end(), ind_inputs.row(r).begin());
          ind_labels.push_back(partition.ind_classes[k]);
          pseudo_rows.push_back(r);
        }
      }
      Matrix ood_inputs(ood_end - ood_begin, in_dim);
      for (std::size_t t = ood_begin; t < ood_end; ++t) {
        auto src = unlabeled.embeddings.row(partition.ood_rows[ood_order[t]]);
        std::copy(src.begin(), src.end(), ood_inputs.row(t - ood_begin).begin());
      }

      const Matrix ind_features = kernels::project_rows(m, ind_inputs);
      const Matrix ood_features = kernels::project_rows(m, ood_inputs);
      const Stage2Output loss =
          stage2_loss(Stage2Batch{ind_features, ind_labels, pseudo_rows, ood_features},
                      m.prototypes, config.weights, config.margins);
      check_loss(loss.value, config, "self-training", epoch);

      ParameterGradients grads = ParameterGradients::zeros_like(m);
      chain_projection(ind_inputs, loss.grad_ind_features, grads);
      chain_projection(ood_inputs, loss.grad_ood_features, grads);
      grads.prototypes = loss.grad_prototypes;
      apply_gradients(m, grads, config);

      entry.loss += loss.value;
      entry.pcl += loss.pcl;
      entry.ind += loss.ind;
      entry.ood += loss.ood;
    }
    if (n_batches > 0) {
      const double inv = 1.0 / static_cast<double>(n_batches);
      entry.loss *= inv;
      entry.pcl *= inv;
      entry.ind *= inv;
      entry.ood *= inv;
    }

    if (audit.unlabeled_gold) audit_epoch(m, data, partition, audit, entry);
    if (on_epoch) on_epoch(entry, m);
    result.log.epochs.push_back(std::move(entry));
    result.last_partition = std::move(partition);
  }
  return result;
}

}  // namespace appood
