#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "appood/partition.hpp"
#include "json.hpp"

namespace appood {

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using LabelMap = std::map<std::string, std::string>;

struct ClassScore {
  std::string label;
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Open-set classification metrics over N IND classes plus OOD, in percent.
struct EvalReport {
  double all_acc = 0.0;
  double all_f1 = 0.0;
  double ind_acc = 0.0;
  double ind_f1 = 0.0;
  double ood_recall = 0.0;
  double ood_f1 = 0.0;

  std::vector<ClassScore> per_class;  // ind classes in order, then OOD
  std::vector<std::string> labels;    // confusion axis order
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]

  std::string method;
  std::uint64_t seed = 0;
  std::string config_digest;
};

EvalReport evaluate(const LabelMap& predictions, const LabelMap& gold,
                    const std::vector<std::string>& ind_classes);

/// Metrics are rounded to two decimals.
nlohmann::json report_to_json(const EvalReport& report);

struct ScoreHistogram {
  std::vector<double> edges;  // n_bins + 1, shared by both populations
  std::vector<std::size_t> ind_counts;
  std::vector<std::size_t> ood_counts;
  std::size_t epoch = 0;
};

ScoreHistogram score_histogram(const std::vector<double>& scores_ind,
                               const std::vector<double>& scores_ood, std::size_t n_bins);

struct PseudoAudit {
  std::size_t ind_total = 0;
  std::size_t ind_correct = 0;
  std::size_t ood_total = 0;
  std::size_t ood_correct = 0;

  double ind_precision() const {
    return ind_total ? static_cast<double>(ind_correct) / static_cast<double>(ind_total) : 0.0;
  }
  double ood_precision() const {
    return ood_total ? static_cast<double>(ood_correct) / static_cast<double>(ood_total) : 0.0;
  }
};

/// A pseudo-IND id is correct when its gold label is the assigned class; a
/// pseudo-OOD id is correct when its gold label is not an IND class.
PseudoAudit pseudo_label_audit(const PseudoPartition& partition, const LabelMap& gold,
                               const std::vector<std::string>& ind_classes);

/// mean(scores_ind) - mean(scores_ood).
double separation_stat(const std::vector<double>& scores_ind,
                       const std::vector<double>& scores_ood);

}  // namespace appood
