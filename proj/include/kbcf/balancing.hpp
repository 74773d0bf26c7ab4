#pragma once

#include <span>
#include <string>
#include <vector>

#include "kbcf/data.hpp"
#include "kbcf/kernel.hpp"
#include "kbcf/rng.hpp"
#include "kbcf/types.hpp"

namespace kbcf {

// Functions h^(1..J) whose weighted observed mean must match the population mean.
struct BalancingFunctionSet {
  enum class Kind { kernel_centers, moments };

  Kind kind = Kind::kernel_centers;
  KernelSpec spec;          // kernel_centers only
  Matrix centers;           // kernel_centers: one feature row per function
  PairList center_pairs;    // kernel_centers: the pairs the centers came from
  std::vector<int> batch_indices;  // position of each center in the batch it was chosen from
  int moment_count = 0;     // moments: orders 1..moment_count

  int size() const;
  // Values h^(j)(x) for each feature row: rows x J.
  Matrix evaluate(const Matrix& feature_rows) const;
};

struct BalanceReport {
  Vector taus;
  double max_abs_tau = 0.0;
  double entropy_term = 0.0;
  double penalty_term = 0.0;
  double loss = 0.0;
};

// Weights are mean-one over the population (1/|B| sum o w = 1), so the
// entropy term is (1/|B|) sum_O w log w. That equals the sum-to-one form of
// the objective up to an additive constant and keeps gamma on the same scale.

// tau_j = (1/|B|) sum o w h_j - (1/|B|) sum h_j, one column of `h` per function.
Vector residuals(const Vector& weights, const Vector& mask, const Matrix& h);
Vector residuals(const Vector& weights, const Vector& mask, const BalancingFunctionSet& fns,
                 const Matrix& feature_rows);

inline double hinge(double z) { return z > 0.0 ? z : 0.0; }

// entropy + gamma * sum_j ([-C - tau_j]_+ + [tau_j - C]_+).
BalanceReport balancing_loss(const Vector& weights, const Vector& mask, const Matrix& h, double gamma,
                             double threshold);
BalanceReport balancing_loss(const Vector& weights, const Vector& mask, const BalancingFunctionSet& fns,
                             const Matrix& feature_rows, double gamma, double threshold);

// (1/|B|) sum_O w log w. Throws NumericError on a non-positive observed weight.
double entropy_term(const Vector& weights, const Vector& mask);

// Random kernel balancing: J centers drawn uniformly without replacement from the batch.
BalancingFunctionSet choose_functions_rkb(std::span<const Pair> batch, const FeatureMap& features,
                                          const KernelSpec& spec, int j, Rng& rng);

struct AkbSelection {
  BalancingFunctionSet functions;
  KernelFit fit;
};

// Adaptive kernel balancing: fit the errors with kernel ridge regression over
// the batch and keep the J centers with the largest |alpha|.
AkbSelection choose_functions_akb(std::span<const Pair> batch, const FeatureMap& features,
                                  const KernelSpec& spec, int j, const Vector& errors, double ridge);
AkbSelection choose_functions_akb(const GramMatrix& gram, const KernelSpec& spec, int j, const Vector& errors,
                                  double ridge);

// Moment balancing: h_j(x) = mean_k x_k^j for j = 1..J.
BalancingFunctionSet choose_functions_mb(int j);

// Worst-case kernel balancing objective: entropy + gamma * v' G v / |B|^2, v = o w - 1.
// The normalized form swaps in |P_G v|^2 / |B|.
double wkb_loss(const Vector& weights, const Vector& mask, const GramMatrix& gram, double gamma,
                WorstCaseForm form = WorstCaseForm::rkhs_ball);

struct ExactEntropyOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;
  std::size_t max_observed = 500;
};

struct ExactEntropyResult {
  Vector weights;       // over the population, zero at unobserved pairs
  Vector multipliers;   // lambda_j of w proportional to exp(sum_j lambda_j h_j)
  int iterations = 0;
  double objective = 0.0;  // sum_O w log w
};

// Maximum-entropy weights meeting every balancing constraint exactly, via
// damped Newton on the Lagrangian dual. Throws InfeasibleError naming the
// worst constraint when the dual diverges.
ExactEntropyResult solve_exact_entropy(const Vector& mask, const Matrix& h, const ExactEntropyOptions& options = {});

}  // namespace kbcf
