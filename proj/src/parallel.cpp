#include "kbcf/parallel.hpp"

#include "kbcf/error.hpp"

namespace kbcf::parallel {

namespace {

double sq_distance(const Matrix& a, Eigen::Index ra, const Matrix& b, Eigen::Index rb) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double d = a(ra, k) - b(rb, k);
    s += d * d;
  }
  return s;
}

void check_columns(const Matrix& points, const Matrix& centers) {
  if (points.cols() != centers.cols()) throw ShapeError("points and centers differ in feature dimension");
}

}  // namespace

Matrix gram_entries(const KernelSpec& spec, const Matrix& rows) {
  const Eigen::Index n = rows.rows();
  Matrix g(n, n);
#pragma omp parallel for schedule(dynamic, 16)
  for (Eigen::Index a = 0; a < n; ++a) {
    g(a, a) = 1.0;
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const double value = kernel_from_sq_distance(spec, sq_distance(rows, a, rows, b));
      g(a, b) = value;
      g(b, a) = value;
    }
  }
  return g;
}

Matrix gram_entries_serial(const KernelSpec& spec, const Matrix& rows) {
  const Eigen::Index n = rows.rows();
  Matrix g(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    g(a, a) = 1.0;
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const double value = kernel_from_sq_distance(spec, sq_distance(rows, a, rows, b));
      g(a, b) = value;
      g(b, a) = value;
    }
  }
  return g;
}

Matrix kernel_columns(const KernelSpec& spec, const Matrix& points, const Matrix& centers) {
  check_columns(points, centers);
  Matrix out(points.rows(), centers.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index r = 0; r < points.rows(); ++r)
    for (Eigen::Index j = 0; j < centers.rows(); ++j)
      out(r, j) = kernel_from_sq_distance(spec, sq_distance(points, r, centers, j));
  return out;
}

Matrix kernel_columns_serial(const KernelSpec& spec, const Matrix& points, const Matrix& centers) {
  check_columns(points, centers);
  Matrix out(points.rows(), centers.rows());
  for (Eigen::Index r = 0; r < points.rows(); ++r)
    for (Eigen::Index j = 0; j < centers.rows(); ++j)
      out(r, j) = kernel_from_sq_distance(spec, sq_distance(points, r, centers, j));
  return out;
}

Vector predict(const FactorizationModel& model, std::span<const Pair> pairs) {
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
  Vector out(n);
  // Range check outside the parallel region; forward() would throw inside it.
  for (const Pair& p : pairs)
    if (p.user < 0 || p.user >= model.n_users() || p.item < 0 || p.item >= model.n_items())
      throw RequestError("pair out of range");
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < n; ++k) out(k) = model.forward(pairs[static_cast<std::size_t>(k)]);
  return out;
}

Vector predict_serial(const FactorizationModel& model, std::span<const Pair> pairs) {
  Vector out(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) out(static_cast<Eigen::Index>(k)) = model.forward(pairs[k]);
  return out;
}

Matrix predict_grid(const FactorizationModel& model) {
  const int n_users = model.n_users();
  const int n_items = model.n_items();
  Matrix out(n_users, n_items);
#pragma omp parallel for schedule(static)
  for (int u = 0; u < n_users; ++u)
    for (int i = 0; i < n_items; ++i) out(u, i) = model.forward({u, i});
  return out;
}

Matrix predict_grid_serial(const FactorizationModel& model) {
  Matrix out(model.n_users(), model.n_items());
  for (int u = 0; u < model.n_users(); ++u)
    for (int i = 0; i < model.n_items(); ++i) out(u, i) = model.forward({u, i});
  return out;
}

}  // namespace kbcf::parallel
