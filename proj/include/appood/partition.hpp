#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace appood {

/// Assignment of every unlabeled example to exactly one of pseudo-IND,
/// pseudo-OOD or abstain. Rows index into the unlabeled pool; ids are kept
/// alongside for auditing and export.
struct PseudoPartition {
  std::size_t epoch = 0;
  std::vector<std::size_t> ind_rows;
  std::vector<int> ind_classes;
  std::vector<std::size_t> ood_rows;
  std::vector<std::size_t> abstain_rows;

  std::vector<std::string> ind_ids;
  std::vector<std::string> ood_ids;
  std::vector<std::string> abstain_ids;

  std::size_t size() const { return ind_rows.size() + ood_rows.size() + abstain_rows.size(); }
};

}  // namespace appood
