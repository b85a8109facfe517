// Serial vs OpenMP timings for the batch kernels.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>

#include "appood/kernels.hpp"

using namespace appood;

namespace {

double best_of(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

Matrix random(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.flat()) v = rng.normal();
  return m;
}

void row(const char* name, double serial, double parallel, bool same) {
  std::printf("%-18s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   identical %s\n", name,
              serial * 1e3, parallel * 1e3, serial / parallel, same ? "yes" : "NO");
}

}  // namespace

int main() {
  Rng rng(1);
  const std::size_t n = 12000, input_dim = 512, proto_dim = 256, classes = 20;
  const Model m = init_model(input_dim, classes, proto_dim, 3);
  const Matrix x = random(rng, n, input_dim);
  const Matrix a = random(rng, 2000, 64);
  const Matrix b = random(rng, 2000, 64);
  std::printf("threads %d, pool %zu x %zu, proto_dim %zu, %zu prototypes\n", omp_get_max_threads(), n,
              input_dim, proto_dim, classes);

  Matrix ps, po;
  row("project_rows", best_of(3, [&] { ps = kernels::serial::project_rows(m, x); }),
      best_of(3, [&] { po = kernels::omp::project_rows(m, x); }), ps == po);

  kernels::MaxSimilarity ms, mo;
  row("max_similarity", best_of(3, [&] { ms = kernels::serial::max_similarity(m, x, SimilarityMode::kCosine); }),
      best_of(3, [&] { mo = kernels::omp::max_similarity(m, x, SimilarityMode::kCosine); }),
      ms.score == mo.score && ms.argmax == mo.argmax);

  Matrix ds, dp;
  row("squared_distances", best_of(3, [&] { ds = kernels::serial::squared_distances(a, b); }),
      best_of(3, [&] { dp = kernels::omp::squared_distances(a, b); }), ds == dp);
  return 0;
}
