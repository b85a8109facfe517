#include "appood/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "appood/io.hpp"
#include "json.hpp"

namespace appood {

using nlohmann::json;

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string line_error(const std::filesystem::path& path, std::size_t line,
                       const std::string& msg) {
  return path.string() + ":" + std::to_string(line) + ": " + msg;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vector hash_featurize(std::string_view text, const FeaturizerConfig& config) {
  if (config.dimension < 2) throw DataError("hash_featurize: dimension must be >= 2");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw DataError("hash_featurize: text has no tokens");

  const std::uint64_t basis = 0xcbf29ce484222325ULL ^ mix64(config.hash_seed + 1);
  Vector out(config.dimension, 0.0);
  auto add = [&](const std::string& feature) {
    const std::uint64_t h = mix64(fnv1a(feature, basis));
    const auto bucket = static_cast<std::size_t>(h % config.dimension);
    out[bucket] += (h >> 63) ? -1.0 : 1.0;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add("u:" + tokens[i]);
    if (i + 1 < tokens.size()) add("b:" + tokens[i] + " " + tokens[i + 1]);
  }
  const double n = norm(out);
  if (n == 0.0) throw DataError("hash_featurize: hashed features cancel to zero");
  for (double& v : out) v /= n;
  return out;
}

Dataset load_jsonl(const std::filesystem::path& path, const FeaturizerConfig& featurizer) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  Dataset data;
  std::unordered_set<std::string> seen;
  std::optional<std::size_t> dim;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(line_error(path, lineno, std::string("malformed JSON: ") + e.what()));
    }
    if (!obj.is_object()) throw DataError(line_error(path, lineno, "expected a JSON object"));
    if (!obj.contains("id") || !obj["id"].is_string()) {
      throw DataError(line_error(path, lineno, "missing string field \"id\""));
    }

    Example ex;
    ex.id = obj["id"].get<std::string>();
    if (!seen.insert(ex.id).second) {
      throw DataError(line_error(path, lineno, "duplicate id \"" + ex.id + "\""));
    }
    if (obj.contains("text") && !obj["text"].is_null()) {
      if (!obj["text"].is_string()) throw DataError(line_error(path, lineno, "text must be a string"));
      ex.text = obj["text"].get<std::string>();
    }
    if (obj.contains("label") && !obj["label"].is_null()) {
      if (!obj["label"].is_string()) throw DataError(line_error(path, lineno, "label must be a string"));
      ex.label = obj["label"].get<std::string>();
    }
    const bool has_embedding = obj.contains("embedding") && !obj["embedding"].is_null();
    if (!has_embedding && !ex.text) {
      throw DataError(line_error(path, lineno, "line has neither \"text\" nor \"embedding\""));
    }
    try {
      if (has_embedding) {
        const auto& arr = obj["embedding"];
        if (!arr.is_array() || arr.empty()) {
          throw DataError("embedding must be a non-empty array of numbers");
        }
        ex.embedding.reserve(arr.size());
        for (const auto& v : arr) {
          if (!v.is_number()) throw DataError("embedding must be a non-empty array of numbers");
          ex.embedding.push_back(v.get<double>());
        }
        require_finite(ex.embedding, "embedding");
      } else {
        ex.embedding = hash_featurize(*ex.text, featurizer);
      }
    } catch (const std::exception& e) {
      throw DataError(line_error(path, lineno, e.what()));
    }
    if (!dim) dim = ex.embedding.size();
    if (ex.embedding.size() != *dim) {
      throw DataError(line_error(path, lineno,
                                 "embedding dimension " + std::to_string(ex.embedding.size()) +
                                     " does not match " + std::to_string(*dim)));
    }
    data.push_back(std::move(ex));
  }
  return data;
}

void write_jsonl(const std::filesystem::path& path, const Dataset& data) {
  std::string out;
  for (const auto& ex : data) {
    json obj;
    obj["id"] = ex.id;
    if (ex.text) obj["text"] = *ex.text;
    obj["embedding"] = ex.embedding;
    if (ex.label) obj["label"] = *ex.label;
    out += obj.dump();
    out += '\n';
  }
  try {
    write_file_atomic(path, out);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

FewShotTask::FewShotTask(TrainingData training, LabeledSet dev, TestSet test,
                         std::vector<std::string> unlabeled_gold, TaskProvenance provenance)
    : training_(std::move(training)),
      dev_(std::move(dev)),
      test_(std::move(test)),
      unlabeled_gold_(std::move(unlabeled_gold)),
      provenance_(provenance) {
  if (unlabeled_gold_.size() != training_.unlabeled.size()) {
    throw DataError("FewShotTask: audit labels must align with the unlabeled pool");
  }
}

std::size_t ind_class_count(std::size_t n_intents, double ind_ratio) {
  const auto n = static_cast<std::size_t>(std::llround(ind_ratio * static_cast<double>(n_intents)));
  return std::max<std::size_t>(1, n);
}

namespace {

const std::string& require_label(const Example& ex, const char* split) {
  if (!ex.label) throw DataError(std::string(split) + " example \"" + ex.id + "\" has no label");
  return *ex.label;
}

Matrix stack(const Dataset& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return {};
  Matrix m(idx.size(), data[idx.front()].embedding.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& e = data[idx[i]].embedding;
    if (e.size() != m.cols()) throw DataError("inconsistent embedding dimension across splits");
    std::copy(e.begin(), e.end(), m.row(i).begin());
  }
  return m;
}

LabeledSet labeled_set(const Dataset& data, const std::vector<std::size_t>& idx,
                       const std::map<std::string, int>& class_index) {
  LabeledSet out;
  out.embeddings = stack(data, idx);
  for (auto i : idx) {
    out.ids.push_back(data[i].id);
    out.labels.push_back(class_index.at(*data[i].label));
  }
  return out;
}

}  // namespace

FewShotTask make_fewshot_splits(const Corpus& corpus, double ind_ratio, std::size_t k,
                                std::uint64_t seed) {
  if (!(ind_ratio > 0.0 && ind_ratio < 1.0)) throw DataError("ind_ratio must lie in (0, 1)");
  std::set<std::string> inventory;
  for (const auto& ex : corpus.train) inventory.insert(require_label(ex, "train"));
  const std::size_t n_ind = ind_class_count(inventory.size(), ind_ratio);
  if (n_ind >= inventory.size()) throw DataError("IND ratio leaves no OOD intents");

  std::vector<std::string> intents(inventory.begin(), inventory.end());
  Rng rng(derive_seed(seed, 1));
  rng.shuffle(intents);
  intents.resize(n_ind);
  std::sort(intents.begin(), intents.end());
  return make_fewshot_splits_for_classes(corpus, std::move(intents), k, seed, ind_ratio);
}

FewShotTask make_fewshot_splits_for_classes(const Corpus& corpus,
                                            std::vector<std::string> ind_classes,
                                            std::size_t k, std::uint64_t seed,
                                            double ind_ratio) {
  if (k < 1) throw DataError("k must be >= 1");
  if (ind_classes.empty()) throw DataError("at least one IND class is required");

  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < ind_classes.size(); ++i) {
    if (!class_index.emplace(ind_classes[i], static_cast<int>(i)).second) {
      throw DataError("duplicate IND class \"" + ind_classes[i] + "\"");
    }
  }

  std::map<std::string, std::vector<std::size_t>> by_class;
  bool has_ood = false;
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    const auto& label = require_label(corpus.train[i], "train");
    if (class_index.count(label)) {
      by_class[label].push_back(i);
    } else {
      has_ood = true;
    }
  }
  if (!has_ood) throw DataError("training pool contains no OOD-class examples");

  const bool carve_dev = corpus.dev.empty();
  const std::size_t dev_k = k;
  std::vector<std::size_t> labeled_idx;
  std::vector<std::size_t> dev_idx;
  std::vector<bool> taken(corpus.train.size(), false);
  for (std::size_t c = 0; c < ind_classes.size(); ++c) {
    auto pool = by_class[ind_classes[c]];
    const std::size_t need = k + (carve_dev ? dev_k : 0);
    if (pool.size() < need) {
      throw DataError("class \"" + ind_classes[c] + "\" has " + std::to_string(pool.size()) +
                      " training examples, needs " + std::to_string(need));
    }
    Rng rng(derive_seed(seed, 100 + c));
    rng.shuffle(pool);
    for (std::size_t j = 0; j < k; ++j) {
      labeled_idx.push_back(pool[j]);
      taken[pool[j]] = true;
    }
    if (carve_dev) {
      for (std::size_t j = k; j < k + dev_k; ++j) {
        dev_idx.push_back(pool[j]);
        taken[pool[j]] = true;
      }
    }
  }

  LabeledSet dev;
  if (carve_dev) {
    dev = labeled_set(corpus.train, dev_idx, class_index);
  } else {
    std::map<std::string, std::vector<std::size_t>> dev_by_class;
    for (std::size_t i = 0; i < corpus.dev.size(); ++i) {
      const auto& label = require_label(corpus.dev[i], "dev");
      if (class_index.count(label)) dev_by_class[label].push_back(i);
    }
    std::vector<std::size_t> picked;
    for (std::size_t c = 0; c < ind_classes.size(); ++c) {
      auto pool = dev_by_class[ind_classes[c]];
      if (pool.size() < dev_k) {
        throw DataError("class \"" + ind_classes[c] + "\" has " + std::to_string(pool.size()) +
                        " dev examples, needs " + std::to_string(dev_k));
      }
      Rng rng(derive_seed(seed, 10000 + c));
      rng.shuffle(pool);
      picked.insert(picked.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(dev_k));
    }
    dev = labeled_set(corpus.dev, picked, class_index);
  }

  TrainingData training;
  training.ind_classes = ind_classes;
  training.labeled = labeled_set(corpus.train, labeled_idx, class_index);

  std::vector<std::size_t> unlabeled_idx;
  std::vector<std::string> unlabeled_gold;
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    if (taken[i]) continue;
    unlabeled_idx.push_back(i);
    unlabeled_gold.push_back(*corpus.train[i].label);
  }
  training.unlabeled.embeddings = stack(corpus.train, unlabeled_idx);
  for (auto i : unlabeled_idx) training.unlabeled.ids.push_back(corpus.train[i].id);

  TestSet test;
  std::vector<std::size_t> test_idx(corpus.test.size());
  for (std::size_t i = 0; i < test_idx.size(); ++i) test_idx[i] = i;
  test.embeddings = stack(corpus.test, test_idx);
  for (const auto& ex : corpus.test) {
    const auto& label = require_label(ex, "test");
    test.ids.push_back(ex.id);
    test.gold.push_back(class_index.count(label) ? label : std::string(kOodLabel));
  }

  if (training.labeled.embeddings.cols() != training.unlabeled.embeddings.cols() &&
      !training.unlabeled.embeddings.empty()) {
    throw DataError("inconsistent embedding dimension across splits");
  }

  return FewShotTask(std::move(training), std::move(dev), std::move(test),
                     std::move(unlabeled_gold), TaskProvenance{seed, ind_ratio, k});
}

namespace {

std::vector<Vector> sample_centers(std::size_t count, std::size_t dim, double radius, Rng& rng) {
  constexpr int kMaxRetries = 1000;
  std::vector<Vector> centers;
  while (centers.size() < count) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      Vector c(dim);
      for (double& v : c) v = rng.normal();
      const double n = norm(c);
      if (n == 0.0) continue;
      for (double& v : c) v *= radius / n;
      placed = std::all_of(centers.begin(), centers.end(), [&](const Vector& other) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < dim; ++i) d2 += (c[i] - other[i]) * (c[i] - other[i]);
        return std::sqrt(d2) >= radius;
      });
      if (placed) centers.push_back(std::move(c));
    }
    if (!placed) {
      throw DataError("synth: could not place " + std::to_string(count) +
                      " separated centers in dimension " + std::to_string(dim));
    }
  }
  return centers;
}

Example draw(const Vector& center, double sigma, Rng& rng, std::string id, std::string label) {
  Vector x = center;
  for (double& v : x) v += sigma * rng.normal();
  const double n = norm(x);
  if (n == 0.0) throw DataError("synth: degenerate zero-norm sample");
  for (double& v : x) v /= n;
  return Example{std::move(id), std::nullopt, std::move(x), std::move(label)};
}

}  // namespace

Corpus synth_corpus(const SynthSpec& spec) {
  if (spec.n_ind_classes == 0 || spec.n_ood_clusters == 0 || spec.dim == 0 || spec.k == 0 ||
      spec.unlabeled_per_class == 0 || spec.test_per_class == 0) {
    throw DataError("synth: all counts must be positive");
  }
  if (!(spec.class_separation > 0.0)) throw DataError("synth: class_separation must be positive");
  if (!(spec.noise_sigma >= 0.0)) throw DataError("synth: noise_sigma must be non-negative");

  Rng rng(derive_seed(spec.seed, 7));
  const std::size_t n_total = spec.n_ind_classes + spec.n_ood_clusters;
  const auto centers = sample_centers(n_total, spec.dim, spec.class_separation, rng);

  Corpus corpus;
  for (std::size_t c = 0; c < n_total; ++c) {
    const bool ind = c < spec.n_ind_classes;
    const std::string label =
        ind ? "ind_" + std::to_string(c) : "ood_" + std::to_string(c - spec.n_ind_classes);
    const std::size_t n_train = spec.unlabeled_per_class + (ind ? spec.k : 0);
    for (std::size_t i = 0; i < n_train; ++i) {
      corpus.train.push_back(
          draw(centers[c], spec.noise_sigma, rng, label + "/train/" + std::to_string(i), label));
    }
    if (ind) {
      for (std::size_t i = 0; i < spec.k; ++i) {
        corpus.dev.push_back(
            draw(centers[c], spec.noise_sigma, rng, label + "/dev/" + std::to_string(i), label));
      }
    }
    for (std::size_t i = 0; i < spec.test_per_class; ++i) {
      corpus.test.push_back(
          draw(centers[c], spec.noise_sigma, rng, label + "/test/" + std::to_string(i), label));
    }
  }
  // Dev examples for the OOD clusters come last so the draws above do not
  // depend on them. They matter only when the corpus is re-split from disk.
  for (std::size_t c = spec.n_ind_classes; c < n_total; ++c) {
    const std::string label = "ood_" + std::to_string(c - spec.n_ind_classes);
    for (std::size_t i = 0; i < spec.k; ++i) {
      corpus.dev.push_back(
          draw(centers[c], spec.noise_sigma, rng, label + "/dev/" + std::to_string(i), label));
    }
  }
  return corpus;
}

FewShotTask synth_task(const SynthSpec& spec) {
  const Corpus corpus = synth_corpus(spec);
  std::vector<std::string> ind_classes;
  for (std::size_t c = 0; c < spec.n_ind_classes; ++c) ind_classes.push_back("ind_" + std::to_string(c));
  std::sort(ind_classes.begin(), ind_classes.end());
  const double ratio = static_cast<double>(spec.n_ind_classes) /
                       static_cast<double>(spec.n_ind_classes + spec.n_ood_clusters);
  return make_fewshot_splits_for_classes(corpus, std::move(ind_classes), spec.k, spec.seed, ratio);
}

}  // namespace appood
