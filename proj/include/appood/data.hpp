#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "appood/numerics.hpp"

namespace appood {

/// Label used for every out-of-domain example in test sets and reports.
inline constexpr std::string_view kOodLabel = "OOD";

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Example {
  std::string id;
  std::optional<std::string> text;
  Vector embedding;
  std::optional<std::string> label;
};

using Dataset = std::vector<Example>;

/// Original train/dev/test partition of a labeled corpus. `dev` may be
/// empty, in which case dev examples are carved out of `train`.
struct Corpus {
  Dataset train;
  Dataset dev;
  Dataset test;
};

struct FeaturizerConfig {
  std::size_t dimension = 512;
  std::uint64_t hash_seed = 0;
};

/// Parse a JSONL file of {"id", "text"?, "embedding"?, "label"?} objects.
/// Text-only lines are featurized with `featurizer`.
Dataset load_jsonl(const std::filesystem::path& path, const FeaturizerConfig& featurizer = {});
void write_jsonl(const std::filesystem::path& path, const Dataset& data);

/// Lowercased runs of ASCII alphanumerics (bytes >= 0x80 are kept inside tokens).
std::vector<std::string> tokenize(std::string_view text);

/// Signed feature hashing of unigrams and bigrams, L2-normalized.
Vector hash_featurize(std::string_view text, const FeaturizerConfig& config);

/// Labeled examples with labels stored as indices into the task's class list.
struct LabeledSet {
  std::vector<std::string> ids;
  Matrix embeddings;
  std::vector<int> labels;

  std::size_t size() const { return ids.size(); }
};

/// Unlabeled pool as seen by training: ids and embeddings, nothing else.
struct UnlabeledSet {
  std::vector<std::string> ids;
  Matrix embeddings;

  std::size_t size() const { return ids.size(); }
};

/// Test examples with gold labels, OOD classes collapsed to kOodLabel.
struct TestSet {
  std::vector<std::string> ids;
  Matrix embeddings;
  std::vector<std::string> gold;

  std::size_t size() const { return ids.size(); }
};

/// Everything the training stages are allowed to read.
struct TrainingData {
  std::vector<std::string> ind_classes;
  LabeledSet labeled;
  UnlabeledSet unlabeled;
};

struct TaskProvenance {
  std::uint64_t seed = 0;
  double ind_ratio = 0.0;
  std::size_t k = 0;
};

class FewShotTask {
 public:
  FewShotTask(TrainingData training, LabeledSet dev, TestSet test,
              std::vector<std::string> unlabeled_gold, TaskProvenance provenance);

  const TrainingData& training() const { return training_; }
  const std::vector<std::string>& ind_classes() const { return training_.ind_classes; }
  const LabeledSet& labeled() const { return training_.labeled; }
  const UnlabeledSet& unlabeled() const { return training_.unlabeled; }
  const LabeledSet& dev() const { return dev_; }
  const TestSet& test() const { return test_; }
  const TaskProvenance& provenance() const { return provenance_; }

  /// Original labels of the unlabeled pool, aligned with unlabeled().ids.
  /// Reserved for pseudo-label auditing; training code never receives it.
  const std::vector<std::string>& audit_labels() const { return unlabeled_gold_; }

 private:
  TrainingData training_;
  LabeledSet dev_;
  TestSet test_;
  std::vector<std::string> unlabeled_gold_;
  TaskProvenance provenance_;
};

/// Number of IND classes for a given inventory size: nearest integer, at least 1.
std::size_t ind_class_count(std::size_t n_intents, double ind_ratio);

FewShotTask make_fewshot_splits(const Corpus& corpus, double ind_ratio, std::size_t k,
                                std::uint64_t seed);

/// Same split recipe with an explicit IND class list.
FewShotTask make_fewshot_splits_for_classes(const Corpus& corpus,
                                            std::vector<std::string> ind_classes,
                                            std::size_t k, std::uint64_t seed,
                                            double ind_ratio);

struct SynthSpec {
  std::size_t n_ind_classes = 5;
  std::size_t n_ood_clusters = 5;
  std::size_t dim = 32;
  std::size_t k = 10;
  std::size_t unlabeled_per_class = 200;
  std::size_t test_per_class = 100;
  double class_separation = 1.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// Gaussian clusters around well-separated centers on a sphere. IND intents
/// are named "ind_<i>", OOD intents "ood_<j>".
Corpus synth_corpus(const SynthSpec& spec);

FewShotTask synth_task(const SynthSpec& spec);

}  // namespace appood
