#include "kbcf/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "kbcf/error.hpp"
#include "kbcf/parallel.hpp"

namespace kbcf {

KernelFamily parse_kernel_family(const std::string& name) {
  if (name == "gaussian" || name == "gau") return KernelFamily::gaussian;
  if (name == "exponential" || name == "exp") return KernelFamily::exponential;
  throw ConfigError("unknown kernel family: " + name);
}

std::string to_string(KernelFamily family) {
  return family == KernelFamily::gaussian ? "gaussian" : "exponential";
}

void KernelSpec::validate() const {
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq)) throw ConfigError("kernel bandwidth sigma^2 must be positive");
}

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& x_prime) {
  if (x.size() != x_prime.size())
    throw ShapeError("kernel arguments differ in dimension (" + std::to_string(x.size()) + " vs " +
                     std::to_string(x_prime.size()) + ")");
  return kernel_from_sq_distance(spec, (x - x_prime).squaredNorm());
}

GramMatrix gram(const KernelSpec& spec, const Matrix& feature_rows) {
  spec.validate();
  if (feature_rows.rows() == 0) throw ShapeError("Gram matrix needs at least one point");
  GramMatrix g;
  g.features = feature_rows;
  g.entries = parallel::gram_entries(spec, feature_rows);
  return g;
}

GramMatrix gram(const KernelSpec& spec, const FeatureMap& features, std::span<const Pair> centers) {
  GramMatrix g = gram(spec, features.rows(centers));
  g.centers.assign(centers.begin(), centers.end());
  return g;
}

KernelFit fit_errors(const GramMatrix& gram, const Vector& errors, double ridge) {
  const Eigen::Index n = gram.size();
  if (errors.size() != n) throw ShapeError("error vector length differs from Gram size");
  if (!errors.allFinite()) throw NumericError("non-finite prediction error passed to the kernel fit");
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be non-negative");

  // G = V diag(l) V'. In that basis the normal equations decouple into
  // l_k (l_k + ridge n) beta_k = l_k (V'e)_k.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram.entries);
  const Vector& lambda = eig.eigenvalues();
  const Matrix& basis = eig.eigenvectors();
  const double cutoff = std::max(lambda.cwiseAbs().maxCoeff(), 1.0) * static_cast<double>(n) *
                        std::numeric_limits<double>::epsilon();
  const Vector projected = basis.transpose() * errors;
  Vector beta = Vector::Zero(n);
  const double shift = ridge * static_cast<double>(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (lambda(k) > cutoff) beta(k) = projected(k) / (lambda(k) + shift);
  }
  KernelFit fit;
  fit.ridge = ridge;
  fit.alphas = basis * beta;
  fit.fitted_values = gram.entries * fit.alphas;
  fit.residual_mse = (errors - fit.fitted_values).squaredNorm() / static_cast<double>(n);
  return fit;
}

std::vector<int> select_top_j(const KernelFit& fit, int j) {
  const auto n = static_cast<int>(fit.alphas.size());
  if (j < 1 || j > n)
    throw RequestError("J = " + std::to_string(j) + " outside [1, " + std::to_string(n) + "]");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(fit.alphas(a)) > std::abs(fit.alphas(b));
  });
  order.resize(static_cast<std::size_t>(j));
  return order;
}

double worst_case_quadratic(const GramMatrix& gram, const Vector& v) {
  const Eigen::Index n = gram.size();
  if (v.size() != n) throw ShapeError("balance vector length differs from Gram size");
  const double q = v.dot(gram.entries * v) / (static_cast<double>(n) * static_cast<double>(n));
  return std::max(q, 0.0);
}

double worst_case_normalized(const GramMatrix& gram, const Vector& v) {
  const Eigen::Index n = gram.size();
  if (v.size() != n) throw ShapeError("balance vector length differs from Gram size");
  return (range_projector(gram) * v).squaredNorm() / static_cast<double>(n);
}

Matrix range_projector(const GramMatrix& gram) {
  const Eigen::Index n = gram.size();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram.entries);
  const Vector& lambda = eig.eigenvalues();
  const double cutoff = std::max(lambda.cwiseAbs().maxCoeff(), 1.0) * static_cast<double>(n) *
                        std::numeric_limits<double>::epsilon();
  std::vector<Eigen::Index> kept;
  for (Eigen::Index k = 0; k < n; ++k)
    if (lambda(k) > cutoff) kept.push_back(k);
  Matrix basis(n, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) basis.col(static_cast<Eigen::Index>(c)) = eig.eigenvectors().col(kept[c]);
  return basis * basis.transpose();
}

WorstCaseForm parse_worst_case_form(const std::string& name) {
  if (name == "rkhs_ball") return WorstCaseForm::rkhs_ball;
  if (name == "normalized") return WorstCaseForm::normalized;
  throw ConfigError("unknown worst-case form: " + name);
}

std::string to_string(WorstCaseForm form) {
  return form == WorstCaseForm::rkhs_ball ? "rkhs_ball" : "normalized";
}

void dump_gram_csv(const GramMatrix& gram, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "user,item";
  for (Eigen::Index b = 0; b < gram.size(); ++b) out << ",k" << b;
  out << '\n';
  for (Eigen::Index a = 0; a < gram.size(); ++a) {
    if (gram.centers.empty()) {
      out << "-1,-1";
    } else {
      const Pair& c = gram.centers[static_cast<std::size_t>(a)];
      out << c.user << ',' << c.item;
    }
    for (Eigen::Index b = 0; b < gram.size(); ++b) out << ',' << gram.entries(a, b);
    out << '\n';
  }
}

}  // namespace kbcf
