#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "appood/data.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace appood;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// 20 intents with 600 train, 50 dev and 50 test examples each.
Corpus stackoverflow_shaped() {
  Corpus c;
  Rng rng(11);
  auto add = [&](Dataset& d, const std::string& split, std::size_t per_class) {
    for (int intent = 0; intent < 20; ++intent) {
      const std::string label = "intent_" + std::to_string(intent);
      for (std::size_t i = 0; i < per_class; ++i) {
        Vector e(4);
        for (double& v : e) v = rng.normal();
        d.push_back({label + "/" + split + "/" + std::to_string(i), std::nullopt, e, label});
      }
    }
  };
  add(c.train, "train", 600);
  add(c.dev, "dev", 50);
  add(c.test, "test", 50);
  return c;
}

}  // namespace

TEST_CASE("load_jsonl parses embeddings and text") {
  testsupport::TempDir dir("load");
  const fs::path p = dir.path() / "a.jsonl";
  write_text(p,
             "{\"id\": \"a\", \"embedding\": [1, 0, 0], \"label\": \"x\"}\n"
             "\n"
             "{\"id\": \"b\", \"embedding\": [0, 1, 0]}\n");
  const auto d = load_jsonl(p);
  REQUIRE(d.size() == 2);
  CHECK(d[0].label == std::optional<std::string>("x"));
  CHECK_FALSE(d[1].label.has_value());
  CHECK(d[1].embedding == Vector{0, 1, 0});

  const fs::path t = dir.path() / "t.jsonl";
  write_text(t, "{\"id\": \"a\", \"text\": \"transfer money now\"}\n");
  const auto dt = load_jsonl(t, FeaturizerConfig{16, 3});
  REQUIRE(dt.size() == 1);
  CHECK(dt[0].embedding.size() == 16);
  CHECK(dt[0].embedding == hash_featurize("transfer money now", FeaturizerConfig{16, 3}));
}

TEST_CASE("load_jsonl reports contract violations") {
  testsupport::TempDir dir("load_err");
  const fs::path p = dir.path() / "bad.jsonl";

  write_text(p, "{\"id\": \"a\", \"embedding\": [1, 0]}\n{\"id\": \"b\"}\n");
  try {
    load_jsonl(p);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write_text(p, "{\"id\": \"a\", \"embedding\": [1, 0, 0, 0]}\n{\"id\": \"b\", \"embedding\": [1, 0, 0, 0, 0]}\n");
  CHECK_THROWS_AS(load_jsonl(p), DataError);

  write_text(p, "{\"id\": \"a\", \"embedding\": [1, 0]}\n{\"id\": \"a\", \"embedding\": [0, 1]}\n");
  CHECK_THROWS_AS(load_jsonl(p), DataError);

  write_text(p, "{\"id\": \"a\", \"embedding\": [1, 0]\n");
  CHECK_THROWS_AS(load_jsonl(p), DataError);

  CHECK_THROWS_AS(load_jsonl(dir.path() / "missing.jsonl"), DataError);
}

TEST_CASE("write_jsonl round trips") {
  testsupport::TempDir dir("roundtrip");
  const Dataset d{{"a", std::string("hi there"), Vector{0.25, -1.5}, std::string("x")},
                  {"b", std::nullopt, Vector{1e-300, 3.0}, std::nullopt}};
  write_jsonl(dir.path() / "sub" / "d.jsonl", d);
  const auto back = load_jsonl(dir.path() / "sub" / "d.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].embedding == d[0].embedding);
  CHECK(back[1].embedding == d[1].embedding);
  CHECK(back[0].text == d[0].text);
  CHECK(back[1].label == d[1].label);
}

TEST_CASE("tokenize and hash_featurize") {
  CHECK(tokenize("Transfer $50, NOW!") == std::vector<std::string>{"transfer", "50", "now"});

  const FeaturizerConfig cfg{64, 0};
  const Vector a = hash_featurize("transfer money", cfg);
  CHECK(a == hash_featurize("transfer money", cfg));
  CHECK(norm(a) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(norm(hash_featurize("what is my balance today", cfg)) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(a != hash_featurize("transfer money", FeaturizerConfig{64, 1}));
  CHECK_THROWS_AS(hash_featurize("?!", cfg), DataError);
}

TEST_CASE("ind class count rounds to nearest with a floor of one") {
  CHECK(ind_class_count(20, 0.25) == 5);
  CHECK(ind_class_count(77, 0.25) == 19);
  CHECK(ind_class_count(2, 0.1) == 1);
}

TEST_CASE("few-shot splits on a Stackoverflow-shaped corpus") {
  const Corpus corpus = stackoverflow_shaped();
  const FewShotTask task = make_fewshot_splits(corpus, 0.25, 10, 3);
  CHECK(task.ind_classes().size() == 5);
  CHECK(task.labeled().size() == 50);
  CHECK(task.unlabeled().size() == 11950);
  CHECK(task.labeled().size() + task.unlabeled().size() == corpus.train.size());
  CHECK(task.dev().size() == 50);
  CHECK(task.test().size() == corpus.test.size());
  CHECK(task.audit_labels().size() == task.unlabeled().size());

  std::vector<std::size_t> per_class(5, 0);
  for (int y : task.labeled().labels) per_class.at(static_cast<std::size_t>(y))++;
  CHECK(per_class == std::vector<std::size_t>(5, 10));

  const std::set<std::string> ind(task.ind_classes().begin(), task.ind_classes().end());
  std::size_t ood = 0;
  for (const auto& g : task.test().gold) {
    if (g == kOodLabel) {
      ++ood;
    } else {
      CHECK(ind.count(g) == 1);
    }
  }
  CHECK(ood == 15 * 50);

  // labeled ids never reappear in the unlabeled pool
  const std::set<std::string> unl(task.unlabeled().ids.begin(), task.unlabeled().ids.end());
  for (const auto& id : task.labeled().ids) CHECK(unl.count(id) == 0);

  const FewShotTask again = make_fewshot_splits(corpus, 0.25, 10, 3);
  CHECK(again.labeled().ids == task.labeled().ids);
  CHECK(again.unlabeled().ids == task.unlabeled().ids);
  CHECK(again.dev().ids == task.dev().ids);
  CHECK(again.ind_classes() == task.ind_classes());
  const FewShotTask other = make_fewshot_splits(corpus, 0.25, 10, 4);
  CHECK(other.labeled().ids != task.labeled().ids);
}

TEST_CASE("dev is carved from train when the corpus has none") {
  Corpus corpus = stackoverflow_shaped();
  corpus.dev.clear();
  const FewShotTask task = make_fewshot_splits(corpus, 0.25, 10, 0);
  CHECK(task.dev().size() == 50);
  CHECK(task.unlabeled().size() == 12000 - 100);
  const std::set<std::string> unl(task.unlabeled().ids.begin(), task.unlabeled().ids.end());
  for (const auto& id : task.dev().ids) CHECK(unl.count(id) == 0);
}

TEST_CASE("split errors") {
  Corpus corpus = stackoverflow_shaped();
  CHECK_THROWS_AS(make_fewshot_splits(corpus, 0.0, 10, 0), DataError);
  CHECK_THROWS_AS(make_fewshot_splits(corpus, 0.25, 601, 0), DataError);
  CHECK_THROWS_AS(make_fewshot_splits(corpus, 0.25, 0, 0), DataError);
  CHECK_THROWS_AS(make_fewshot_splits(corpus, 0.99, 10, 0), DataError);
}

TEST_CASE("synthetic tasks") {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.unlabeled_per_class = 20;
  spec.test_per_class = 10;
  const Corpus corpus = synth_corpus(spec);
  // zero noise: every example is its normalized center, so nearest center is exact
  std::map<std::string, Vector> center;
  for (const auto& ex : corpus.train) {
    auto [it, fresh] = center.emplace(*ex.label, ex.embedding);
    if (!fresh) CHECK(it->second == ex.embedding);
  }
  for (const auto& ex : corpus.test) {
    std::string best;
    double best_d = 1e300;
    for (const auto& [label, c] : center) {
      double d = 0.0;
      for (std::size_t i = 0; i < c.size(); ++i) d += (c[i] - ex.embedding[i]) * (c[i] - ex.embedding[i]);
      if (d < best_d) {
        best_d = d;
        best = label;
      }
    }
    CHECK(best == *ex.label);
  }

  std::set<std::string> dev_labels;
  for (const auto& ex : corpus.dev) dev_labels.insert(*ex.label);
  CHECK(dev_labels.size() == spec.n_ind_classes + spec.n_ood_clusters);
  // a corpus written to disk can be re-split with a different IND set
  CHECK_NOTHROW(make_fewshot_splits(corpus, 0.5, spec.k, 9));

  const FewShotTask t0 = synth_task(SynthSpec{});
  CHECK(t0.labeled().size() == 50);
  CHECK(t0.unlabeled().size() == 2000);
  SynthSpec s1;
  s1.seed = 1;
  const FewShotTask t1 = synth_task(s1);
  CHECK(t1.labeled().size() == t0.labeled().size());
  CHECK(t1.unlabeled().size() == t0.unlabeled().size());
  CHECK(t1.test().size() == t0.test().size());
  CHECK(!(t1.labeled().embeddings == t0.labeled().embeddings));

  SynthSpec crowded;
  crowded.dim = 2;
  crowded.n_ind_classes = 20;
  crowded.n_ood_clusters = 20;
  CHECK_THROWS_AS(synth_corpus(crowded), DataError);
}
