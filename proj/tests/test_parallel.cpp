#include <doctest.h>

#include <omp.h>

#include "helpers.hpp"
#include "kbcf/error.hpp"
#include "kbcf/parallel.hpp"

using namespace kbcf;

namespace {

Matrix random_rows(int n, int dim, Rng& rng) {
  Matrix m(n, dim);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < dim; ++c) m(r, c) = rng.normal();
  return m;
}

// Runs f under several thread counts and restores the default afterwards.
template <typename F>
void for_thread_counts(F&& f) {
  const int saved = omp_get_max_threads();
  for (int threads : {1, 2, 3, 8}) {
    omp_set_num_threads(threads);
    f(threads);
  }
  omp_set_num_threads(saved);
}

}  // namespace

TEST_SUITE("parallel") {

TEST_CASE("Gram entries: parallel equals serial bit for bit") {
  Rng rng(1);
  for (KernelFamily fam : {KernelFamily::gaussian, KernelFamily::exponential}) {
    const KernelSpec spec{fam, 0.9};
    const Matrix rows = random_rows(67, 5, rng);
    const Matrix serial = parallel::gram_entries_serial(spec, rows);
    for_thread_counts([&](int) { CHECK(parallel::gram_entries(spec, rows) == serial); });
    CHECK(serial == serial.transpose());
  }
}

TEST_CASE("kernel columns: parallel equals serial bit for bit") {
  Rng rng(2);
  const KernelSpec spec{KernelFamily::gaussian, 1.3};
  const Matrix points = random_rows(101, 4, rng);
  const Matrix centers = random_rows(7, 4, rng);
  const Matrix serial = parallel::kernel_columns_serial(spec, points, centers);
  for_thread_counts([&](int) { CHECK(parallel::kernel_columns(spec, points, centers) == serial); });
  CHECK(serial(3, 2) == doctest::Approx(kernel_eval(spec, points.row(3).transpose(), centers.row(2).transpose())));
}

TEST_CASE("predictions: parallel equals serial bit for bit") {
  Rng rng(3);
  for (Link link : {Link::sigmoid, Link::exp, Link::identity}) {
    const FactorizationModel m = FactorizationModel::random(23, 31, 6, link, rng, 0.5);
    const PairList pairs = testing::random_dataset(23, 31, 1.0, 4).all_pairs();
    const Vector serial = parallel::predict_serial(m, pairs);
    const Matrix grid = parallel::predict_grid_serial(m);
    for_thread_counts([&](int) {
      CHECK(parallel::predict(m, pairs) == serial);
      CHECK(parallel::predict_grid(m) == grid);
    });
    CHECK(serial(40) == m.forward(pairs[40]));
    CHECK(grid(5, 7) == m.forward({5, 7}));
  }
}

TEST_CASE("out-of-range pairs are rejected before any work") {
  Rng rng(4);
  const FactorizationModel m = FactorizationModel::random(3, 3, 2, Link::sigmoid, rng);
  const PairList bad = {{0, 0}, {3, 1}};
  CHECK_THROWS_AS(parallel::predict(m, bad), RequestError);
  CHECK_THROWS_AS(parallel::predict_serial(m, bad), RequestError);
}

}
