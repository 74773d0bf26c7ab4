#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kbcf/data.hpp"
#include "kbcf/types.hpp"

namespace kbcf {

enum class KernelFamily { gaussian, exponential };

KernelFamily parse_kernel_family(const std::string& name);
std::string to_string(KernelFamily family);

struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  double sigma_sq = 1.0;

  void validate() const;
};

// gaussian: exp(-|x - x'|^2 / (2 sigma^2)); exponential: exp(-|x - x'| / (2 sigma^2)).
double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& x_prime);

// Same value from squared distance, used by the bulk kernels.
inline double kernel_from_sq_distance(const KernelSpec& spec, double sq_distance);

// Symmetric Gram matrix over a set of centers with unit diagonal.
struct GramMatrix {
  PairList centers;   // may be empty when built straight from feature rows
  Matrix features;    // one row per center
  Matrix entries;

  Eigen::Index size() const { return entries.rows(); }
};

GramMatrix gram(const KernelSpec& spec, const Matrix& feature_rows);
GramMatrix gram(const KernelSpec& spec, const FeatureMap& features, std::span<const Pair> centers);

// Ridge-regularized kernel fit of prediction errors over the Gram's own points.
struct KernelFit {
  Vector alphas;
  double ridge = 0.0;
  Vector fitted_values;
  double residual_mse = 0.0;
};

// alpha solves (G G + ridge |B| G) alpha = G e; the minimum-norm solution is
// returned when the system is singular (always the case for ridge = 0 with a
// rank-deficient G).
KernelFit fit_errors(const GramMatrix& gram, const Vector& errors, double ridge);

// Indices of the J largest |alpha|; ties go to the lower index.
std::vector<int> select_top_j(const KernelFit& fit, int j);

// Supremum of the squared KBIPS bias over the unit RKHS ball restricted to the
// batch: v' G v / |B|^2 with v = o w - 1.
double worst_case_quadratic(const GramMatrix& gram, const Vector& v);

// Variant normalized by the empirical norm of e: |P_G v|^2 / |B|, where P_G
// projects onto the range of G.
double worst_case_normalized(const GramMatrix& gram, const Vector& v);

// Orthogonal projector onto the range of G.
Matrix range_projector(const GramMatrix& gram);

enum class WorstCaseForm { rkhs_ball, normalized };

WorstCaseForm parse_worst_case_form(const std::string& name);
std::string to_string(WorstCaseForm form);

// Debug dump: one row per center (user, item) followed by its Gram row.
void dump_gram_csv(const GramMatrix& gram, const std::filesystem::path& path);

inline double kernel_from_sq_distance(const KernelSpec& spec, double sq_distance) {
  const double denom = 2.0 * spec.sigma_sq;
  return spec.family == KernelFamily::gaussian ? std::exp(-sq_distance / denom)
                                               : std::exp(-std::sqrt(sq_distance) / denom);
}

}  // namespace kbcf
