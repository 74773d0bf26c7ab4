#include <doctest.h>

#include <Eigen/LU>
#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "kbcf/balancing.hpp"
#include "kbcf/error.hpp"
#include "kbcf/estimators.hpp"
#include "kbcf/objectives.hpp"

using namespace kbcf;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

Matrix random_rows(int n, int dim, Rng& rng) {
  Matrix m(n, dim);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < dim; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

TEST_SUITE("balancing") {

TEST_CASE("residuals: balanced cases") {
  Rng rng(1);
  const Matrix h = random_rows(6, 3, rng);
  CHECK(residuals(Vector::Ones(6), Vector::Ones(6), h).cwiseAbs().maxCoeff() < 1e-15);
  // Constant functions are balanced by any mean-one weights.
  const Vector m = vec({1, 0, 1, 1, 0, 0});
  Vector w = vec({1.5, 7.0, 3.0, 1.5, 2.0, 2.0});  // (1/6)(1.5 + 3 + 1.5) = 1
  const Matrix c = Matrix::Constant(6, 2, 0.37);
  CHECK(residuals(w, m, c).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("residuals: 3-pair Gaussian instance by hand") {
  // Points x = 0, 1, 2 (1-D), center 0, sigma^2 = 0.5: h = exp(-x^2) = (1, e^-1, e^-4).
  BalancingFunctionSet fns;
  fns.spec = KernelSpec{KernelFamily::gaussian, 0.5};
  fns.centers = Matrix::Zero(1, 1);
  Matrix rows(3, 1);
  rows << 0, 1, 2;
  const Vector m = vec({1, 1, 0});
  const Vector w = vec({2.0, 1.0, 5.0});
  const double e1 = std::exp(-1.0), e4 = std::exp(-4.0);
  const double expected = (2.0 * 1.0 + 1.0 * e1) / 3.0 - (1.0 + e1 + e4) / 3.0;
  CHECK(std::abs(residuals(w, m, fns, rows)(0) - expected) <= 1e-12);
}

TEST_CASE("residuals are linear in h") {
  Rng rng(3);
  const Matrix h1 = random_rows(9, 2, rng), h2 = random_rows(9, 2, rng);
  Vector w(9), m(9);
  for (int k = 0; k < 9; ++k) {
    w(k) = rng.uniform(0.1, 3.0);
    m(k) = k % 3 ? 1.0 : 0.0;
  }
  const Vector lhs = residuals(w, m, 2.5 * h1 - 0.75 * h2);
  const Vector rhs = 2.5 * residuals(w, m, h1) - 0.75 * residuals(w, m, h2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("balancing loss: hinge arithmetic") {
  // One function whose tau we control: h = (1, 0), mask (1, 1), w = (a, 2 - a): tau = (a - 1)/2.
  Matrix h(2, 1);
  h << 1, 0;
  const Vector m = Vector::Ones(2);
  const double c = 0.01;
  const double a = 1.0 + 2.0 * (c + 0.3);
  const Vector w = vec({a, 2.0 - a});
  const BalanceReport r = balancing_loss(w, m, h, 5.0, c);
  CHECK(r.taus(0) == doctest::Approx(c + 0.3));
  CHECK(r.penalty_term == doctest::Approx(0.3));
  CHECK(r.loss - r.entropy_term == doctest::Approx(1.5));
  CHECK(r.max_abs_tau == doctest::Approx(c + 0.3));

  const BalanceReport zero_gamma = balancing_loss(w, m, h, 0.0, c);
  CHECK(zero_gamma.loss == zero_gamma.entropy_term);

  const BalanceReport inactive = balancing_loss(w, m, h, 5.0, 1.0);
  CHECK(inactive.penalty_term == 0.0);
  CHECK(inactive.loss == inactive.entropy_term);

  CHECK_THROWS_AS(balancing_loss(w, m, h, -1.0, c), ConfigError);
  CHECK_THROWS_AS(balancing_loss(vec({0.0, 2.0}), m, h, 1.0, c), NumericError);
}

TEST_CASE("entropy term over observed pairs, mean over the batch") {
  const Vector w = vec({2.0, 100.0, 0.5});
  const Vector m = vec({1, 0, 1});
  CHECK(entropy_term(w, m) == doctest::Approx((2.0 * std::log(2.0) + 0.5 * std::log(0.5)) / 3.0));
}

TEST_CASE("balancing loss is convex in the weights") {
  Rng rng(9);
  const Matrix h = random_rows(10, 3, rng);
  Vector m(10);
  for (int k = 0; k < 10; ++k) m(k) = k % 4 ? 1.0 : 0.0;
  for (int t = 0; t < 50; ++t) {
    Vector a(10), b(10);
    for (int k = 0; k < 10; ++k) {
      a(k) = rng.uniform(0.05, 4.0);
      b(k) = rng.uniform(0.05, 4.0);
    }
    const double mid = balancing_loss(0.5 * (a + b), m, h, 5.0, 0.01).loss;
    const double avg = 0.5 * (balancing_loss(a, m, h, 5.0, 0.01).loss + balancing_loss(b, m, h, 5.0, 0.01).loss);
    CHECK(mid <= avg + 1e-10);
  }
}

TEST_CASE("RKB selection") {
  const FeatureMap f = FeatureMap::one_hot(4, 5);
  const PairList batch = testing::random_dataset(4, 5, 1.0, 1).all_pairs();
  Rng r1(3), r2(3);
  const auto a = choose_functions_rkb(batch, f, KernelSpec{}, 6, r1);
  const auto b = choose_functions_rkb(batch, f, KernelSpec{}, 6, r2);
  CHECK(a.center_pairs == b.center_pairs);
  CHECK(a.size() == 6);
  std::vector<int> idx = a.batch_indices;
  std::sort(idx.begin(), idx.end());
  CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  Rng r3(4);
  const auto all = choose_functions_rkb(batch, f, KernelSpec{}, 20, r3);
  idx = all.batch_indices;
  std::sort(idx.begin(), idx.end());
  for (int k = 0; k < 20; ++k) CHECK(idx[static_cast<std::size_t>(k)] == k);
  CHECK_THROWS_AS(choose_functions_rkb(batch, f, KernelSpec{}, 0, r3), RequestError);
  CHECK_THROWS_AS(choose_functions_rkb(batch, f, KernelSpec{}, 21, r3), RequestError);
  // Center rows are the features of the chosen pairs.
  for (int j = 0; j < a.size(); ++j)
    CHECK(a.centers.row(j).transpose() == f.vector(a.center_pairs[static_cast<std::size_t>(j)]));
}

TEST_CASE("AKB: zero errors fall back to the first J centers") {
  Rng rng(2);
  const GramMatrix g = gram(KernelSpec{}, random_rows(7, 2, rng));
  const AkbSelection s = choose_functions_akb(g, KernelSpec{}, 3, Vector::Zero(7), 1e-3);
  CHECK(s.fit.alphas.isZero());
  CHECK(s.functions.batch_indices == std::vector<int>{0, 1, 2});
}

TEST_CASE("AKB: errors equal to one kernel column select that center first") {
  Rng rng(4);
  for (int x0 = 0; x0 < 6; ++x0) {
    const GramMatrix g = gram(KernelSpec{KernelFamily::gaussian, 0.5}, random_rows(6, 3, rng));
    const Vector e = g.entries.col(x0);
    const Vector dense = g.entries.fullPivLu().solve(e);  // lambda -> 0 limit
    Eigen::Index top = 0;
    dense.cwiseAbs().maxCoeff(&top);
    CHECK(top == x0);
    const AkbSelection s = choose_functions_akb(g, KernelSpec{KernelFamily::gaussian, 0.5}, 1, e, 1e-12);
    CHECK(s.functions.batch_indices[0] == x0);
  }
}

TEST_CASE("AKB: J = 1 picks the largest |alpha| of a dense ridge solve") {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const GramMatrix g = gram(KernelSpec{}, random_rows(5, 2, rng));
    Vector e(5);
    for (int k = 0; k < 5; ++k) e(k) = rng.uniform(0.0, 2.0);
    const double ridge = 1e-3;
    const Matrix& G = g.entries;
    const Vector alpha = (G * G + ridge * 5.0 * G).fullPivLu().solve(G * e);
    Eigen::Index top = 0;
    alpha.cwiseAbs().maxCoeff(&top);
    CHECK(choose_functions_akb(g, KernelSpec{}, 1, e, ridge).functions.batch_indices[0] == top);
    // Positive scaling of e keeps the selection.
    CHECK(choose_functions_akb(g, KernelSpec{}, 3, e, ridge).functions.batch_indices ==
          choose_functions_akb(g, KernelSpec{}, 3, 4.0 * e, ridge).functions.batch_indices);
  }
}

TEST_CASE("AKB over a pair batch records the center pairs") {
  const FeatureMap f = FeatureMap::one_hot(3, 3);
  const PairList batch = {{0, 0}, {1, 2}, {2, 1}, {0, 2}};
  const AkbSelection s = choose_functions_akb(batch, f, KernelSpec{}, 2, vec({0.1, 2.0, 0.3, 1.0}), 1e-3);
  REQUIRE(s.functions.center_pairs.size() == 2);
  CHECK(s.functions.center_pairs[0] == batch[static_cast<std::size_t>(s.functions.batch_indices[0])]);
}

TEST_CASE("moment balancing functions") {
  const BalancingFunctionSet fns = choose_functions_mb(3);
  Matrix rows(2, 2);
  rows << 1.0, 2.0, -1.0, 0.5;
  const Matrix h = fns.evaluate(rows);
  CHECK(h(0, 0) == doctest::Approx(1.5));
  CHECK(h(0, 1) == doctest::Approx(2.5));
  CHECK(h(0, 2) == doctest::Approx(4.5));
  CHECK(h(1, 2) == doctest::Approx((-1.0 + 0.125) / 2.0));
  CHECK_THROWS_AS(choose_functions_mb(0), RequestError);
}

TEST_CASE("WKB loss") {
  Rng rng(7);
  const GramMatrix g = gram(KernelSpec{}, random_rows(5, 2, rng));
  const Vector m = Vector::Ones(5);
  CHECK(wkb_loss(Vector::Ones(5), m, g, 3.0) == doctest::Approx(entropy_term(Vector::Ones(5), m)));
  const Vector w = vec({0.5, 1.5, 1.2, 0.8, 1.0});
  CHECK(wkb_loss(w, m, g, 0.0) == doctest::Approx(entropy_term(w, m)));
  const Vector v = w - Vector::Ones(5);
  CHECK(wkb_loss(w, m, g, 2.0) == doctest::Approx(entropy_term(w, m) + 2.0 * worst_case_quadratic(g, v)));
  CHECK(wkb_loss(w, m, g, 2.0, WorstCaseForm::normalized) ==
        doctest::Approx(entropy_term(w, m) + 2.0 * worst_case_normalized(g, v)));
}

TEST_CASE("WKB objective decreases monotonically under gradient descent") {
  const Dataset d = testing::random_dataset(4, 4, 0.5, 12);
  const PairList pairs = d.all_pairs();
  const Vector m = batch_mask(d, pairs);
  Rng rng(5);
  FactorizationModel w = FactorizationModel::random(4, 4, 2, Link::exp, rng, 0.5);
  const FeatureMap f = FeatureMap::one_hot(4, 4);
  const GramMatrix g = gram(KernelSpec{KernelFamily::gaussian, 1.0}, f, pairs);
  double previous = INFINITY;
  for (int step = 0; step < 100; ++step) {
    const LossGradient lg = wkb_loss_gradient(w, pairs, m, g, 5.0);
    CHECK(lg.value <= previous + 1e-15);
    previous = lg.value;
    std::vector<double> g_vals;
    Parameters grad = lg.gradient;
    testing::for_each_scalar(grad, [&](double& x) { g_vals.push_back(x); });
    std::size_t k = 0;
    testing::for_each_scalar(w.params, [&](double& x) { x -= 0.05 * g_vals[k++]; });
  }
}

TEST_CASE("exact entropy: trivial instances") {
  SUBCASE("constant function only gives uniform weights n / |O|") {
    const Vector m = vec({1, 0, 1, 1, 0, 0, 0, 1});
    const Matrix h = Matrix::Constant(8, 1, 0.4);
    const ExactEntropyResult r = solve_exact_entropy(m, h);
    for (int k = 0; k < 8; ++k) CHECK(r.weights(k) == doctest::Approx(m(k) * 2.0).epsilon(1e-12));
  }
  SUBCASE("fully observed batch is already balanced") {
    Rng rng(2);
    const Matrix h = random_rows(7, 3, rng);
    const ExactEntropyResult r = solve_exact_entropy(Vector::Ones(7), h);
    CHECK((r.weights - Vector::Ones(7)).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(solve_exact_entropy(Vector::Zero(3), Matrix::Ones(3, 1)), InfeasibleError);
    CHECK_THROWS_AS(solve_exact_entropy(Vector::Ones(3), Matrix::Ones(4, 1)), ShapeError);
    ExactEntropyOptions small;
    small.max_observed = 2;
    CHECK_THROWS_AS(solve_exact_entropy(Vector::Ones(3), Matrix::Ones(3, 1), small), RequestError);
  }
}

TEST_CASE("exact entropy: infeasible constraints name a constraint") {
  // Observed pairs all have h = 0 while the population mean is positive.
  const Vector m = vec({1, 1, 0, 0});
  Matrix h(4, 2);
  h << 0, 1, 0, 2, 1, 0, 1, 3;
  try {
    solve_exact_entropy(m, h);
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK(std::string(e.what()).find("constraint 1") != std::string::npos);
  }
}

TEST_CASE("exact entropy matches an independent projected-gradient reference (20 pairs, 2 linear moments)") {
  Rng rng(41);
  int checked = 0;
  for (int t = 0; t < 10; ++t) {
    Vector m(20);
    Matrix h(20, 2);
    for (int k = 0; k < 20; ++k) {
      m(k) = rng.bernoulli(0.6) ? 1.0 : 0.0;
      h(k, 0) = rng.uniform(-1.0, 1.0);
      h(k, 1) = rng.uniform(0.0, 2.0);
    }
    if (m.sum() < 6) continue;
    const ExactEntropyResult r = solve_exact_entropy(m, h);
    CHECK(residuals(r.weights, m, h).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(m.dot(r.weights) / 20.0 - 1.0) <= 1e-12);
    CHECK(std::abs(r.objective - testing::projected_gradient_entropy(m, h)) <= 1e-6);
    ++checked;
  }
  CHECK(checked >= 5);
}

TEST_CASE("Theorem-1 instance: errors in the span of the balanced kernels give an unbiased KBIPS") {
  const Dataset d = generate_synthetic({8, 8, 3, 0.2, 0.9, 4});
  const PairList pairs = d.all_pairs();
  const Vector m = batch_mask(d, pairs);
  const FeatureMap f = FeatureMap::one_hot(8, 8);
  Rng rng(3);
  const BalancingFunctionSet fns = choose_functions_rkb(pairs, f, KernelSpec{KernelFamily::gaussian, 1.0}, 3, rng);
  const Matrix h = fns.evaluate(f.rows(pairs));
  const Vector e = h * vec({0.8, -0.3, 1.7});
  const ExactEntropyResult r = solve_exact_entropy(m, h);
  CHECK(std::abs(kbips_loss(e, m, r.weights) - ideal_loss(e)) <= 1e-6);
}

}
