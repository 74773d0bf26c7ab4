#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "kbcf/error.hpp"
#include "kbcf/kernel.hpp"

using namespace kbcf;

namespace {

Matrix random_rows(int n, int dim, Rng& rng, double spread = 1.0) {
  Matrix m(n, dim);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < dim; ++c) m(r, c) = spread * rng.normal();
  return m;
}

double min_eigenvalue(const Matrix& g) { return Eigen::SelfAdjointEigenSolver<Matrix>(g).eigenvalues().minCoeff(); }

}  // namespace

TEST_SUITE("kernel") {

TEST_CASE("kernel_eval formulas") {
  for (KernelFamily fam : {KernelFamily::gaussian, KernelFamily::exponential}) {
    const KernelSpec spec{fam, 0.7};
    Vector x(3);
    x << 0.3, -1.0, 2.0;
    CHECK(kernel_eval(spec, x, x) == 1.0);
  }
  {
    const KernelSpec spec{KernelFamily::gaussian, 0.5};
    Vector x = Vector::Zero(2), y(2);
    y << 1.0, 0.0;  // squared distance 1 = 2 sigma^2
    CHECK(kernel_eval(spec, x, y) == doctest::Approx(0.367879441171442).epsilon(1e-13));
  }
  {
    const KernelSpec spec{KernelFamily::exponential, 1.5};
    Vector x = Vector::Zero(2), y(2);
    y << 0.0, 3.0;  // distance 3 = 2 sigma^2
    CHECK(kernel_eval(spec, x, y) == doctest::Approx(std::exp(-1.0)).epsilon(1e-13));
  }
  const KernelSpec spec{};
  CHECK_THROWS_AS(kernel_eval(spec, Vector::Zero(2), Vector::Zero(3)), ShapeError);
}

TEST_CASE("kernel_eval is symmetric and decreasing in distance") {
  Rng rng(4);
  for (KernelFamily fam : {KernelFamily::gaussian, KernelFamily::exponential}) {
    const KernelSpec spec{fam, 1.0};
    const Vector x = random_rows(1, 4, rng).transpose();
    const Vector dir = random_rows(1, 4, rng).transpose().normalized();
    double previous = 1.0;
    for (int s = 1; s <= 20; ++s) {
      const Vector y = x + 0.25 * s * dir;
      const double k = kernel_eval(spec, x, y);
      CHECK(k == kernel_eval(spec, y, x));
      CHECK(k < previous);
      CHECK(k > 0.0);
      previous = k;
    }
  }
}

TEST_CASE("kernel spec validation") {
  CHECK_THROWS_AS((KernelSpec{KernelFamily::gaussian, 0.0}.validate()), ConfigError);
  CHECK_THROWS_AS((KernelSpec{KernelFamily::gaussian, -1.0}.validate()), ConfigError);
  CHECK(parse_kernel_family("gau") == KernelFamily::gaussian);
  CHECK(parse_kernel_family("exp") == KernelFamily::exponential);
  CHECK_THROWS_AS(parse_kernel_family("laplace"), ConfigError);
}

TEST_CASE("small Gram matrices") {
  const KernelSpec spec{};
  Matrix one(1, 3);
  one << 1, 2, 3;
  const GramMatrix g1 = gram(spec, one);
  CHECK(g1.size() == 1);
  CHECK(g1.entries(0, 0) == 1.0);

  Matrix twin(2, 3);
  twin << 1, 2, 3, 1, 2, 3;
  const GramMatrix g2 = gram(spec, twin);
  CHECK(g2.entries == Matrix::Ones(2, 2));
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(g2.entries).eigenvalues();
  CHECK(ev(0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(ev(1) == doctest::Approx(2.0));
  CHECK_THROWS_AS(gram(spec, Matrix(0, 3)), ShapeError);
}

TEST_CASE("Gram matrices are symmetric, unit-diagonal and PSD") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = trial < 10 ? 5 : 20;
    const KernelSpec spec{trial % 2 ? KernelFamily::exponential : KernelFamily::gaussian, 0.5 + trial % 3};
    const GramMatrix g = gram(spec, random_rows(n, 6, rng, 0.5));
    CHECK(g.entries == g.entries.transpose());
    CHECK(g.entries.diagonal() == Vector::Ones(n));
    CHECK(min_eigenvalue(g.entries) >= -1e-8 * g.entries.trace());
  }
}

TEST_CASE("fit_errors: identity Gram and lambda limits") {
  GramMatrix g;
  g.entries = Matrix::Identity(4, 4);
  Vector e(4);
  e << 0.3, 1.2, -0.5, 2.0;
  const KernelFit exact = fit_errors(g, e, 0.0);
  CHECK((exact.alphas - e).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(exact.residual_mse < 1e-28);

  const KernelFit heavy = fit_errors(g, e, 1e12);
  CHECK(heavy.alphas.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(heavy.residual_mse == doctest::Approx(e.squaredNorm() / 4.0).epsilon(1e-9));

  CHECK_THROWS_AS(fit_errors(g, e, -1.0), ConfigError);
  Vector bad = e;
  bad(2) = std::nan("");
  CHECK_THROWS_AS(fit_errors(g, bad, 0.1), NumericError);
  CHECK_THROWS_AS(fit_errors(g, Vector::Zero(3), 0.1), ShapeError);
}

TEST_CASE("fit_errors matches a dense solve of the normal equations") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const KernelSpec spec{trial % 2 ? KernelFamily::exponential : KernelFamily::gaussian, 1.0};
    const GramMatrix g = gram(spec, random_rows(4, 3, rng));
    Vector e(4);
    for (int k = 0; k < 4; ++k) e(k) = rng.uniform(0.0, 3.0);
    const double ridge = 1e-3;
    const Matrix& G = g.entries;
    const Matrix lhs = G * G + ridge * 4.0 * G;
    const Vector reference = lhs.fullPivLu().solve(G * e);
    const KernelFit fit = fit_errors(g, e, ridge);
    CHECK((fit.alphas - reference).norm() / reference.norm() <= 1e-8);
    CHECK((fit.fitted_values - G * fit.alphas).norm() < 1e-12);
  }
}

TEST_CASE("fit_errors: larger ridge never lowers the residual") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const GramMatrix g = gram(KernelSpec{}, random_rows(12, 3, rng));
    Vector e(12);
    for (int k = 0; k < 12; ++k) e(k) = rng.uniform(0.0, 2.0);
    double previous = -1.0;
    for (double ridge = 1e-6; ridge < 10.0; ridge *= 2.0) {
      const double mse = fit_errors(g, e, ridge).residual_mse;
      CHECK(mse >= previous - 1e-12);
      previous = mse;
    }
  }
}

TEST_CASE("fit_errors at lambda = 0 on a singular Gram is the minimum-norm solution") {
  Matrix rows(3, 2);
  rows << 0, 0, 0, 0, 1, 1;  // first two points coincide
  const GramMatrix g = gram(KernelSpec{}, rows);
  Vector e(3);
  e << 1.0, 1.0, 0.5;
  const KernelFit fit = fit_errors(g, e, 0.0);
  const Vector reference = g.entries.completeOrthogonalDecomposition().pseudoInverse() * e;
  CHECK((fit.alphas - reference).norm() < 1e-10);
  CHECK(fit.alphas(0) == doctest::Approx(fit.alphas(1)));
}

TEST_CASE("select_top_j") {
  KernelFit fit;
  fit.alphas = Vector(3);
  fit.alphas << 0.1, -0.9, 0.5;
  CHECK(select_top_j(fit, 2) == std::vector<int>{1, 2});
  CHECK(select_top_j(fit, 3) == std::vector<int>{1, 2, 0});
  CHECK_THROWS_AS(select_top_j(fit, 0), RequestError);
  CHECK_THROWS_AS(select_top_j(fit, 4), RequestError);

  fit.alphas = Vector(4);
  fit.alphas << -0.7, 0.2, 0.3, 0.7;
  CHECK(select_top_j(fit, 1) == std::vector<int>{0});

  Rng rng(2);
  fit.alphas = Vector(8);
  for (int k = 0; k < 8; ++k) fit.alphas(k) = rng.normal();
  KernelFit scaled = fit;
  scaled.alphas *= 37.5;
  CHECK(select_top_j(fit, 4) == select_top_j(scaled, 4));
}

TEST_CASE("worst_case_quadratic basics") {
  Rng rng(6);
  const GramMatrix g = gram(KernelSpec{}, random_rows(6, 3, rng));
  CHECK(worst_case_quadratic(g, Vector::Zero(6)) == 0.0);
  GramMatrix id;
  id.entries = Matrix::Identity(5, 5);
  Vector v(5);
  v << 1, -2, 0.5, 0, 3;
  CHECK(worst_case_quadratic(id, v) == doctest::Approx(v.squaredNorm() / 25.0).epsilon(1e-15));
  CHECK_THROWS_AS(worst_case_quadratic(id, Vector::Zero(4)), ShapeError);

  // Joint permutation of G and v leaves the value unchanged.
  Vector w(6);
  for (int k = 0; k < 6; ++k) w(k) = rng.normal();
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  GramMatrix pg;
  pg.entries = perm * g.entries * perm.transpose();
  CHECK(worst_case_quadratic(pg, perm * w) == doctest::Approx(worst_case_quadratic(g, w)).epsilon(1e-13));
}

TEST_CASE("worst_case_quadratic equals the supremum over the unit RKHS ball (3 points, grid search)") {
  Rng rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    const GramMatrix g = gram(KernelSpec{KernelFamily::gaussian, 0.8}, random_rows(3, 2, rng));
    Vector v(3);
    for (int k = 0; k < 3; ++k) v(k) = rng.uniform(-1.0, 2.0);
    const Matrix& G = g.entries;
    // Bias of f = G alpha against v is (1/n) v' G alpha; scan directions of alpha on the sphere,
    // rescaled to unit RKHS norm alpha' G alpha = 1.
    double best = 0.0;
    const int n_theta = 600, n_phi = 1200;
    for (int a = 0; a <= n_theta; ++a) {
      const double theta = std::numbers::pi * a / n_theta;
      for (int b = 0; b < n_phi; ++b) {
        const double phi = 2.0 * std::numbers::pi * b / n_phi;
        Vector alpha(3);
        alpha << std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta);
        const double norm_sq = alpha.dot(G * alpha);
        if (norm_sq <= 1e-14) continue;
        const double bias = v.dot(G * alpha) / 3.0 / std::sqrt(norm_sq);
        best = std::max(best, bias * bias);
      }
    }
    const double closed = worst_case_quadratic(g, v);
    CHECK(std::abs(best - closed) <= 1e-3 * std::max(closed, 1e-3));
    CHECK(best <= closed * (1.0 + 1e-12));
  }
}

TEST_CASE("normalized worst case uses the range projector") {
  Rng rng(8);
  Matrix rows = random_rows(5, 2, rng);
  rows.row(4) = rows.row(0);  // rank deficient
  const GramMatrix g = gram(KernelSpec{}, rows);
  const Matrix p = range_projector(g);
  CHECK((p * p - p).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.trace() == doctest::Approx(4.0).epsilon(1e-9));
  Vector v(5);
  v << 1, -1, 0.5, 0.2, -0.3;
  CHECK(worst_case_normalized(g, v) == doctest::Approx((p * v).squaredNorm() / 5.0).epsilon(1e-12));
  CHECK(parse_worst_case_form("normalized") == WorstCaseForm::normalized);
  CHECK_THROWS_AS(parse_worst_case_form("other"), ConfigError);
}

TEST_CASE("Gram dump writes centers and entries") {
  testing::TempDir dir;
  const FeatureMap f = FeatureMap::one_hot(3, 3);
  const PairList centers = {{0, 1}, {2, 2}};
  const GramMatrix g = gram(KernelSpec{}, f, centers);
  dump_gram_csv(g, dir / "g.csv");
  const std::string text = testing::read_file(dir / "g.csv");
  CHECK(text.rfind("user,item,k0,k1\n0,1,1,", 0) == 0);
  CHECK(text.find("\n2,2,") != std::string::npos);
}

}
