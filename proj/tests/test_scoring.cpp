#include <cmath>

#include "appood/scoring.hpp"
#include "appood/training.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace appood;

namespace {

Model identity_model(const Matrix& prototypes) {
  const std::size_t d = prototypes.cols();
  Model m = init_model(d, prototypes.rows(), d, 0);
  m.projection.weight = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) m.projection.weight(i, i) = 1.0;
  m.prototypes = prototypes;
  return m;
}

CeHead bias_head(Vector bias) {
  return CeHead{Matrix(bias.size(), 1), std::move(bias)};
}

}  // namespace

TEST_CASE("prototype confidence") {
  const Model m = identity_model(Matrix::from_rows({{1, 0, 0}, {0, 2, 0}}));
  CHECK(proto_confidence(m, Vector{0, 5, 0}) == doctest::Approx(1.0));
  CHECK(proto_confidence(m, Vector{0, 0, 3}) == 0.0);

  Rng rng(1);
  const Model r = init_model(6, 4, 5, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Vector x(6);
    for (double& v : x) v = rng.normal();
    const Vector s = project(r, x);
    double best = -2.0;
    for (std::size_t l = 0; l < 4; ++l) best = std::max(best, cosine(s, r.prototypes.row(l)));
    const double c = proto_confidence(r, x);
    CHECK(c == doctest::Approx(best).epsilon(1e-14));
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("threshold calibration") {
  CHECK(calibrate_threshold({1.0, 0.9, 0.8, 0.7}, 0.75) == 0.8);
  CHECK(calibrate_threshold({0.7, 1.0, 0.8, 0.9}, 0.75) == 0.8);
  CHECK(calibrate_threshold({0.42}, 0.1) == 0.42);
  CHECK(calibrate_threshold({0.42}, 0.9) == 0.42);
  CHECK_THROWS(calibrate_threshold({}, 0.75));
  CHECK_THROWS(calibrate_threshold({1.0}, 1.0));

  Rng rng(2);
  for (std::size_t n = 1; n <= 50; ++n) {
    std::vector<double> s(n);
    for (auto& v : s) v = rng.normal();
    CHECK(calibrate_threshold(s, 0.75) == testsupport::brute_force_quantile_75(s));
  }
}

TEST_CASE("open-set classification") {
  const Model m = identity_model(Matrix::from_rows({{1, 0}, {0, 1}}));
  const std::vector<std::string> names{"a", "b"};
  const Vector x{0.9, std::sqrt(1 - 0.81)};  // confidence 0.9 toward "a"
  CHECK(classify(m, x, 0.7, names) == "a");
  CHECK(classify(m, Vector{1, 1}, 0.75, names) == "OOD");
  const double c = proto_confidence(m, x);
  CHECK(classify(m, x, c, names) == "a");
  CHECK(classify(m, x, std::nextafter(c, 2.0), names) == "OOD");
  CHECK_THROWS(classify(m, x, std::nan(""), names));

  ScoredBatch batch{{0.9, 0.5, 0.7}, {1, 0, 0}};
  CHECK(open_set_predictions(batch, 0.7, names) == std::vector<std::string>{"b", "OOD", "a"});
}

TEST_CASE("msp and energy") {
  CHECK(msp_from_logits(Vector{0, 0}) == doctest::Approx(0.5));
  const double e2 = std::exp(2.0);
  CHECK(std::abs(msp_from_logits(Vector{2, 0}) - e2 / (e2 + 1)) < 1e-15);

  const Vector x{0.0};
  CHECK(energy_score(bias_head({0, 0}), x) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(energy_score(bias_head({1000, 1000}), x) == doctest::Approx(1000 + std::log(2.0)).epsilon(1e-15));

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vector b(2 + rng.below(4));
    for (double& v : b) v = 3 * rng.normal();
    const double shift = 10 * rng.normal();
    Vector shifted = b;
    for (double& v : shifted) v += shift;
    CHECK(std::abs(msp_score(bias_head(b), x) - msp_score(bias_head(shifted), x)) < 1e-12);
    const double base = energy_score(bias_head(b), x);
    Vector raised = b;
    raised[rng.below(b.size())] += 0.1 + rng.uniform();
    CHECK(energy_score(bias_head(raised), x) > base);
    const double msp = msp_score(bias_head(b), x);
    CHECK(msp > 1.0 / static_cast<double>(b.size()));
    CHECK(msp <= 1.0);
  }
}

TEST_CASE("cross-entropy head") {
  // two separable blobs
  Rng rng(4);
  Matrix x(40, 2);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(i, 0) = (y[i] ? 2.0 : -2.0) + 0.3 * rng.normal();
    x(i, 1) = 0.3 * rng.normal();
  }
  const CeTrainConfig cfg{200, 0.05, 8, 7};
  const CeHead h = train_ce_head(x, y, 2, cfg);
  for (std::size_t i = 0; i < 40; ++i) {
    const Vector l = head_logits(h, x.row(i));
    CHECK((l[1] > l[0]) == (y[i] == 1));
  }
  const CeHead again = train_ce_head(x, y, 2, cfg);
  CHECK(again.weight == h.weight);
  CHECK(again.bias == h.bias);

  for (int i = 0; i < 20; ++i) CHECK(testsupport::check_ce(rng).rel_error < 1e-4);
  CHECK_THROWS(train_ce_head(x, std::vector<int>(40, 0), 1, cfg));
}

TEST_CASE("gda") {
  // per class: mean +/- sqrt(2) along each axis gives pooled covariance I
  const double a = std::sqrt(2.0);
  const Matrix x = Matrix::from_rows({{a, 0}, {-a, 0}, {0, a}, {0, -a},
                                      {5 + a, 5}, {5 - a, 5}, {5, 5 + a}, {5, 5 - a}});
  const std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
  const GdaState g = gda_fit(x, y, 2, 0.0);
  const Vector q{1.0, 2.0};
  CHECK(gda_score(g, q) == doctest::Approx(-(1.0 + 4.0)).epsilon(1e-12));
  CHECK(gda_score(g, Vector{5, 5}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(gda_score(g, Vector{5, 5}) >= gda_score(g, Vector{5.1, 5}));

  Matrix dup(4, 2);
  CHECK_THROWS(gda_fit(dup, std::vector<int>{0, 0, 1, 1}, 2, 0.0));
  CHECK_THROWS(gda_fit(x, std::vector<int>{0, 1, 1, 1, 1, 1, 1, 1}, 2));
}

TEST_CASE("gda is rotation invariant") {
  Rng rng(5);
  const Matrix x = testsupport::random_matrix(rng, 20, 2);
  std::vector<int> y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = static_cast<int>(i % 3);
  const double th = 0.7;
  Matrix r(20, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    r(i, 0) = std::cos(th) * x(i, 0) - std::sin(th) * x(i, 1);
    r(i, 1) = std::sin(th) * x(i, 0) + std::cos(th) * x(i, 1);
  }
  const GdaState g = gda_fit(x, y, 3);
  const GdaState gr = gda_fit(r, y, 3);
  const Vector q{0.3, -1.2};
  const Vector qr{std::cos(th) * q[0] - std::sin(th) * q[1], std::sin(th) * q[0] + std::cos(th) * q[1]};
  CHECK(gda_score(gr, qr) == doctest::Approx(gda_score(g, q)).epsilon(1e-10));
}

TEST_CASE("lof") {
  Matrix lattice(21, 1);
  for (std::size_t i = 0; i < 21; ++i) lattice(i, 0) = static_cast<double>(i);
  const LofState s = lof_fit(lattice, 2);
  CHECK(lof_factor(s, Vector{10.5}) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(lof_score(s, Vector{10.5}) == doctest::Approx(-1.0).epsilon(1e-6));

  Rng rng(6);
  Matrix cluster = testsupport::random_matrix(rng, 15, 2, 0.1);
  const LofState c = lof_fit(cluster, 5);
  CHECK(lof_factor(c, Vector{10, 10}) > 10 * lof_factor(c, Vector{0, 0}));

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.below(8);
    const std::size_t k = 1 + rng.below(n - 1);
    const Matrix ref = testsupport::random_matrix(rng, n, 2);
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < n; ++i) rows.emplace_back(ref.row(i).begin(), ref.row(i).end());
    const LofState st = lof_fit(ref, k);
    const Vector q{rng.normal(), rng.normal()};
    const double want = testsupport::brute_force_lof(rows, q, k);
    CHECK(std::abs(lof_factor(st, q) - want) <= 1e-9 * std::abs(want));
  }

  CHECK_THROWS(lof_fit(Matrix(5, 2), 2));
  CHECK_THROWS(lof_fit(lattice, 21));
  CHECK(lof_fit(lattice).k == 20);
}

TEST_CASE("every scorer ranks an in-cluster point above a far point") {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.n_ind_classes = 3;
  spec.n_ood_clusters = 2;
  spec.dim = 8;
  spec.k = 5;
  spec.unlabeled_per_class = 20;
  spec.test_per_class = 2;
  const FewShotTask task = synth_task(spec);
  TrainConfig cfg;
  cfg.proto_dim = 16;
  cfg.pretrain_epochs = 50;
  const Model m = pretrain(task.training(), cfg);

  // dev points are cluster centers when noise is zero; add a tiny jitter for LOF/GDA variance
  Matrix train = task.labeled().embeddings;
  Rng rng(7);
  for (double& v : train.flat()) v += 0.01 * rng.normal();
  const CeHead head = train_ce_head(train, task.labeled().labels, 3, CeTrainConfig{});

  Matrix probe(2, 8);
  for (std::size_t j = 0; j < 8; ++j) probe(0, j) = task.labeled().embeddings(0, j);
  // far point: the negated IND center is as far from every IND class as the sphere allows
  for (std::size_t j = 0; j < 8; ++j) probe(1, j) = -task.labeled().embeddings(0, j);

  const std::vector<ConfidenceScorer> scorers{
      ConfidenceScorer::proto(m),
      ConfidenceScorer::msp(head),
      ConfidenceScorer::energy(head),
      ConfidenceScorer::gda(gda_fit(train, task.labeled().labels, 3)),
      ConfidenceScorer::lof(lof_fit(train), head)};
  for (const auto& s : scorers) {
    const auto out = s.score(probe);
    INFO(to_string(s.kind()));
    CHECK(out.scores[0] > out.scores[1]);
    CHECK(out.predicted[0] == task.labeled().labels[0]);
  }
}

TEST_CASE("scorer names round trip") {
  for (auto k : {ScorerKind::kProto, ScorerKind::kMsp, ScorerKind::kEnergy, ScorerKind::kGda, ScorerKind::kLof}) {
    CHECK(scorer_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS(scorer_kind_from_string("auroc"));
}
