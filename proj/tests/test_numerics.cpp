#include <cmath>
#include <limits>

#include "appood/losses.hpp"
#include "appood/numerics.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace appood;

TEST_CASE("dot products") {
  const Vector a{1, 0}, b{0, 1}, c{1, 2}, d{3, 4};
  CHECK(dot(a, b) == 0.0);
  CHECK(dot(c, d) == 11.0);
  const double r = 1.0 / std::sqrt(2.0);
  const Vector u{r, r};
  CHECK(dot(u, u) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(dot(a, Vector{1, 2, 3}), NumericError);
}

TEST_CASE("cosine") {
  CHECK(cosine(Vector{2, 0}, Vector{1, 0}) == 1.0);
  CHECK(cosine(Vector{1, 0}, Vector{0, 3}) == 0.0);
  // 1/sqrt(2) to 20 significant digits
  CHECK(std::abs(cosine(Vector{1, 1}, Vector{1, 0}) - 0.70710678118654752440) < 1e-15);
  CHECK_THROWS_AS(cosine(Vector{0, 0}, Vector{1, 0}), NumericError);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Vector x(5), y(5);
    for (auto& v : x) v = rng.normal() * 1e3;
    for (auto& v : y) v = rng.normal() * 1e-3;
    const double cxy = cosine(x, y);
    CHECK(cxy <= 1.0);
    CHECK(cxy >= -1.0);
    CHECK(cosine(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("logsumexp") {
  CHECK(logsumexp(Vector{0, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(logsumexp(Vector{1000, 1000}) == doctest::Approx(1000 + std::log(2.0)).epsilon(1e-15));
  CHECK(logsumexp(Vector{3}) == 3.0);
  CHECK_THROWS_AS(logsumexp(Vector{}), NumericError);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Vector x(1 + rng.below(8));
    for (auto& v : x) v = 10 * rng.normal();
    const double m = *std::max_element(x.begin(), x.end());
    const double l = logsumexp(x);
    CHECK(l >= m);
    CHECK(l <= m + std::log(static_cast<double>(x.size())) + 1e-12);
  }
}

TEST_CASE("softmax sums to one") {
  Vector p(3);
  softmax(Vector{1, 2, 3}, p);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(p[2] > p[1]);
}

TEST_CASE("adam first step matches the closed form") {
  AdamState s(1);
  Vector param{0.0};
  const Vector grad{1.0};
  adam_step(s, param, grad, 1e-3);
  // m_hat = 1, v_hat = 1 after bias correction at t = 1
  CHECK(param[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(s.t == 1);
}

TEST_CASE("adam with zero gradient is the identity") {
  AdamState s(3);
  Vector param{1.5, -2.0, 0.25};
  const Vector before = param;
  for (int i = 0; i < 5; ++i) adam_step(s, param, Vector{0, 0, 0}, 0.1);
  CHECK(param == before);
  CHECK(s.t == 5);
}

TEST_CASE("adam moves against the gradient sign") {
  AdamState s(2);
  Vector param{0.0, 0.0};
  const Vector grad{2.0, -3.0};
  adam_step(s, param, grad, 0.01);
  const Vector first = param;
  adam_step(s, param, grad, 0.01);
  CHECK(first[0] < 0.0);
  CHECK(param[0] < first[0]);
  CHECK(first[1] > 0.0);
  CHECK(param[1] > first[1]);
}

TEST_CASE("adam rejects bad input") {
  AdamState s(2);
  Vector param{0.0, 0.0};
  CHECK_THROWS_AS(adam_step(s, param, Vector{1.0}, 0.1), NumericError);
  CHECK_THROWS_AS(adam_step(s, param, Vector{std::nan(""), 0.0}, 0.1), NumericError);
  CHECK_THROWS_AS(adam_step(s, param, Vector{1.0, 0.0}, 0.0), NumericError);
}

TEST_CASE("finite differences") {
  const Vector g = finite_diff_grad([](const Vector& x) { return x[0] * x[0]; }, Vector{3.0});
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-8));

  const Vector c{1.5, -2.0, 0.5};
  const Vector h = finite_diff_grad([&](const Vector& x) { return dot(c, x); }, Vector{0.1, 0.2, 0.3});
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(h[i] == doctest::Approx(c[i]).epsilon(1e-8));

  Rng rng(6);
  const Matrix f = testsupport::random_matrix(rng, 2, 3);
  const Matrix p = testsupport::random_matrix(rng, 2, 3);
  const std::vector<int> labels{0, 1};
  const auto out = instance_prototype_loss(f, labels, p);
  const Vector fd = finite_diff_grad(
      [&](const Vector& x) {
        Matrix g2(2, 3);
        testsupport::unpack(x, 0, g2);
        return instance_prototype_loss(g2, labels, p).value;
      },
      testsupport::concat({f.flat()}));
  CHECK(testsupport::relative_error(testsupport::concat({out.grad_features.flat()}), fd) < 1e-4);

  CHECK_THROWS_AS(finite_diff_grad([](const Vector&) { return std::nan(""); }, Vector{1.0}),
                  NumericError);
}

TEST_CASE("spd inverse") {
  const Matrix a = Matrix::from_rows({{4, 1}, {1, 3}});
  const Matrix inv = spd_inverse(a);
  // 1/11 * [[3, -1], [-1, 4]]
  CHECK(inv(0, 0) == doctest::Approx(3.0 / 11));
  CHECK(inv(0, 1) == doctest::Approx(-1.0 / 11));
  CHECK(inv(1, 1) == doctest::Approx(4.0 / 11));
  CHECK_THROWS_AS(spd_inverse(Matrix::from_rows({{1, 2}, {2, 1}})), NumericError);
}

TEST_CASE("matrix boundaries reject non-finite rows") {
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), NumericError);
  CHECK_THROWS_AS(require_finite(Vector{1, std::numeric_limits<double>::infinity()}, "x"),
                  NumericError);
}

TEST_CASE("rng is deterministic and seed sensitive") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(u.below(3) < 3);
  }
}
