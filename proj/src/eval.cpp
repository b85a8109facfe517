#include "appood/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "appood/data.hpp"

namespace appood {

namespace {

double pct(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

double round2(double x) { return std::round(x * 100.0) / 100.0; }

}  // namespace

EvalReport evaluate(const LabelMap& predictions, const LabelMap& gold,
                    const std::vector<std::string>& ind_classes) {
  if (predictions.size() != gold.size()) {
    throw EvalError("evaluate: prediction and gold id sets differ in size");
  }
  std::map<std::string, std::size_t> index;
  EvalReport r;
  for (const auto& c : ind_classes) {
    if (c == kOodLabel) throw EvalError("evaluate: IND class may not be named OOD");
    if (!index.emplace(c, r.labels.size()).second) throw EvalError("evaluate: duplicate class " + c);
    r.labels.push_back(c);
  }
  const std::size_t ood = r.labels.size();
  index.emplace(std::string(kOodLabel), ood);
  r.labels.emplace_back(kOodLabel);
  const std::size_t n_labels = r.labels.size();
  r.confusion.assign(n_labels, std::vector<std::size_t>(n_labels, 0));

  auto lookup = [&](const std::string& label) {
    auto it = index.find(label);
    if (it == index.end()) throw EvalError("evaluate: unknown label \"" + label + "\"");
    return it->second;
  };

  for (const auto& [id, g] : gold) {
    auto it = predictions.find(id);
    if (it == predictions.end()) throw EvalError("evaluate: no prediction for id \"" + id + "\"");
    r.confusion[lookup(g)][lookup(it->second)] += 1;
  }

  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t ind_total = 0;
  std::size_t ind_correct = 0;
  for (std::size_t g = 0; g < n_labels; ++g) {
    std::size_t support = 0;
    std::size_t predicted = 0;
    for (std::size_t p = 0; p < n_labels; ++p) {
      support += r.confusion[g][p];
      predicted += r.confusion[p][g];
    }
    const std::size_t tp = r.confusion[g][g];
    total += support;
    correct += tp;
    if (g != ood) {
      ind_total += support;
      ind_correct += tp;
    }
    ClassScore cs;
    cs.label = r.labels[g];
    cs.support = support;
    cs.precision = pct(tp, predicted);
    cs.recall = pct(tp, support);
    cs.f1 = f1_of(cs.precision, cs.recall);
    r.per_class.push_back(cs);
  }

  double f1_all = 0.0;
  double f1_ind = 0.0;
  for (std::size_t g = 0; g < n_labels; ++g) {
    f1_all += r.per_class[g].f1;
    if (g != ood) f1_ind += r.per_class[g].f1;
  }
  r.all_acc = pct(correct, total);
  r.all_f1 = f1_all / static_cast<double>(n_labels);
  r.ind_acc = pct(ind_correct, ind_total);
  r.ind_f1 = ind_classes.empty() ? 0.0 : f1_ind / static_cast<double>(ind_classes.size());
  r.ood_recall = r.per_class[ood].recall;
  r.ood_f1 = r.per_class[ood].f1;
  return r;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  j["metrics"] = {{"all_acc", round2(report.all_acc)},       {"all_f1", round2(report.all_f1)},
                  {"ind_acc", round2(report.ind_acc)},       {"ind_f1", round2(report.ind_f1)},
                  {"ood_recall", round2(report.ood_recall)}, {"ood_f1", round2(report.ood_f1)}};
  auto per_class = nlohmann::json::array();
  for (const auto& c : report.per_class) {
    per_class.push_back({{"label", c.label},
                         {"precision", round2(c.precision)},
                         {"recall", round2(c.recall)},
                         {"f1", round2(c.f1)},
                         {"support", c.support}});
  }
  j["per_class"] = per_class;
  j["labels"] = report.labels;
  j["confusion"] = report.confusion;
  return j;
}

ScoreHistogram score_histogram(const std::vector<double>& scores_ind,
                               const std::vector<double>& scores_ood, std::size_t n_bins) {
  if (n_bins < 2) throw EvalError("score_histogram: need at least 2 bins");
  if (scores_ind.empty() || scores_ood.empty()) {
    throw EvalError("score_histogram: both populations must be non-empty");
  }
  double lo = scores_ind.front();
  double hi = lo;
  for (const auto* pop : {&scores_ind, &scores_ood}) {
    for (double s : *pop) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  }
  ScoreHistogram h;
  h.edges.resize(n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t b = 0; b <= n_bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;

  auto bin_of = [&](double s) -> std::size_t {
    if (width <= 0.0) return 0;
    auto b = static_cast<std::size_t>((s - lo) / width);
    return std::min(b, n_bins - 1);
  };
  h.ind_counts.assign(n_bins, 0);
  h.ood_counts.assign(n_bins, 0);
  for (double s : scores_ind) h.ind_counts[bin_of(s)] += 1;
  for (double s : scores_ood) h.ood_counts[bin_of(s)] += 1;
  return h;
}

PseudoAudit pseudo_label_audit(const PseudoPartition& partition, const LabelMap& gold,
                               const std::vector<std::string>& ind_classes) {
  if (partition.ind_ids.size() != partition.ind_classes.size()) {
    throw EvalError("pseudo_label_audit: pseudo-IND ids and classes differ in length");
  }
  const std::set<std::string> ind(ind_classes.begin(), ind_classes.end());
  auto gold_of = [&](const std::string& id) -> const std::string& {
    auto it = gold.find(id);
    if (it == gold.end()) throw EvalError("pseudo_label_audit: no gold label for id \"" + id + "\"");
    return it->second;
  };

  PseudoAudit a;
  a.ind_total = partition.ind_ids.size();
  for (std::size_t i = 0; i < partition.ind_ids.size(); ++i) {
    const auto cls = partition.ind_classes[i];
    if (cls < 0 || static_cast<std::size_t>(cls) >= ind_classes.size()) {
      throw EvalError("pseudo_label_audit: assigned class out of range");
    }
    if (gold_of(partition.ind_ids[i]) == ind_classes[static_cast<std::size_t>(cls)]) {
      ++a.ind_correct;
    }
  }
  a.ood_total = partition.ood_ids.size();
  for (const auto& id : partition.ood_ids) {
    if (!ind.count(gold_of(id))) ++a.ood_correct;
  }
  return a;
}

double separation_stat(const std::vector<double>& scores_ind,
                       const std::vector<double>& scores_ood) {
  if (scores_ind.empty() || scores_ood.empty()) {
    throw EvalError("separation_stat: both populations must be non-empty");
  }
  double a = 0.0;
  for (double s : scores_ind) a += s;
  double b = 0.0;
  for (double s : scores_ood) b += s;
  return a / static_cast<double>(scores_ind.size()) - b / static_cast<double>(scores_ood.size());
}

}  // namespace appood
