#include "kbcf/balancing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/QR>

#include "kbcf/error.hpp"
#include "kbcf/parallel.hpp"

namespace kbcf {

int BalancingFunctionSet::size() const {
  return kind == Kind::kernel_centers ? static_cast<int>(centers.rows()) : moment_count;
}

Matrix BalancingFunctionSet::evaluate(const Matrix& feature_rows) const {
  if (kind == Kind::kernel_centers) return parallel::kernel_columns(spec, feature_rows, centers);
  Matrix h(feature_rows.rows(), moment_count);
  const double dim = static_cast<double>(std::max<Eigen::Index>(feature_rows.cols(), 1));
  for (Eigen::Index r = 0; r < feature_rows.rows(); ++r) {
    for (int j = 1; j <= moment_count; ++j) {
      double sum = 0.0;
      for (Eigen::Index k = 0; k < feature_rows.cols(); ++k) sum += std::pow(feature_rows(r, k), j);
      h(r, j - 1) = sum / dim;
    }
  }
  return h;
}

Vector residuals(const Vector& weights, const Vector& mask, const Matrix& h) {
  if (weights.size() != mask.size() || h.rows() != mask.size())
    throw ShapeError("weights, mask and function values must cover the same pairs");
  if (mask.size() == 0) throw ShapeError("balancing residuals need a nonempty batch");
  const double n = static_cast<double>(mask.size());
  Vector taus = Vector::Zero(h.cols());
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    double weighted = 0.0;
    double plain = 0.0;
    for (Eigen::Index k = 0; k < mask.size(); ++k) {
      if (mask(k) != 0.0) weighted += weights(k) * h(k, j);
      plain += h(k, j);
    }
    taus(j) = weighted / n - plain / n;
  }
  return taus;
}

Vector residuals(const Vector& weights, const Vector& mask, const BalancingFunctionSet& fns,
                 const Matrix& feature_rows) {
  return residuals(weights, mask, fns.evaluate(feature_rows));
}

double entropy_term(const Vector& weights, const Vector& mask) {
  if (weights.size() != mask.size()) throw ShapeError("weights and mask differ in length");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    if (mask(k) == 0.0) continue;
    if (!(weights(k) > 0.0)) throw NumericError("balancing weight must be positive on observed pairs");
    sum += weights(k) * std::log(weights(k));
  }
  return sum / static_cast<double>(mask.size());
}

BalanceReport balancing_loss(const Vector& weights, const Vector& mask, const Matrix& h, double gamma,
                             double threshold) {
  if (!(gamma >= 0.0) || !(threshold >= 0.0)) throw ConfigError("gamma and C must be non-negative");
  BalanceReport report;
  report.taus = residuals(weights, mask, h);
  report.max_abs_tau = report.taus.size() ? report.taus.cwiseAbs().maxCoeff() : 0.0;
  report.entropy_term = entropy_term(weights, mask);
  for (Eigen::Index j = 0; j < report.taus.size(); ++j)
    report.penalty_term += hinge(-threshold - report.taus(j)) + hinge(report.taus(j) - threshold);
  report.loss = report.entropy_term + gamma * report.penalty_term;
  return report;
}

BalanceReport balancing_loss(const Vector& weights, const Vector& mask, const BalancingFunctionSet& fns,
                             const Matrix& feature_rows, double gamma, double threshold) {
  return balancing_loss(weights, mask, fns.evaluate(feature_rows), gamma, threshold);
}

namespace {

BalancingFunctionSet centers_from_batch(std::span<const Pair> batch, const Matrix& batch_rows,
                                        const KernelSpec& spec, std::vector<int> indices) {
  BalancingFunctionSet fns;
  fns.kind = BalancingFunctionSet::Kind::kernel_centers;
  fns.spec = spec;
  fns.centers.resize(static_cast<Eigen::Index>(indices.size()), batch_rows.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    fns.centers.row(static_cast<Eigen::Index>(r)) = batch_rows.row(indices[r]);
    if (!batch.empty()) fns.center_pairs.push_back(batch[static_cast<std::size_t>(indices[r])]);
  }
  fns.batch_indices = std::move(indices);
  return fns;
}

}  // namespace

BalancingFunctionSet choose_functions_rkb(std::span<const Pair> batch, const FeatureMap& features,
                                          const KernelSpec& spec, int j, Rng& rng) {
  spec.validate();
  const auto n = static_cast<int>(batch.size());
  if (j < 1 || j > n) throw RequestError("RKB needs 1 <= J <= batch size, got J = " + std::to_string(j));
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) pool[static_cast<std::size_t>(k)] = k;
  for (int k = 0; k < j; ++k) {
    const auto pick = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - k)));
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
  }
  pool.resize(static_cast<std::size_t>(j));
  return centers_from_batch(batch, features.rows(batch), spec, std::move(pool));
}

AkbSelection choose_functions_akb(const GramMatrix& gram, const KernelSpec& spec, int j, const Vector& errors,
                                  double ridge) {
  AkbSelection out;
  out.fit = fit_errors(gram, errors, ridge);
  out.functions = centers_from_batch(gram.centers, gram.features, spec, select_top_j(out.fit, j));
  return out;
}

AkbSelection choose_functions_akb(std::span<const Pair> batch, const FeatureMap& features,
                                  const KernelSpec& spec, int j, const Vector& errors, double ridge) {
  return choose_functions_akb(gram(spec, features, batch), spec, j, errors, ridge);
}

BalancingFunctionSet choose_functions_mb(int j) {
  if (j < 1) throw RequestError("moment balancing needs J >= 1");
  BalancingFunctionSet fns;
  fns.kind = BalancingFunctionSet::Kind::moments;
  fns.moment_count = j;
  return fns;
}

double wkb_loss(const Vector& weights, const Vector& mask, const GramMatrix& gram, double gamma,
                WorstCaseForm form) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (weights.size() != gram.size() || mask.size() != gram.size())
    throw ShapeError("WKB weights must cover the Gram batch");
  Vector v(mask.size());
  for (Eigen::Index k = 0; k < mask.size(); ++k) v(k) = (mask(k) != 0.0 ? weights(k) : 0.0) - 1.0;
  const double worst = form == WorstCaseForm::rkhs_ball ? worst_case_quadratic(gram, v)
                                                        : worst_case_normalized(gram, v);
  return entropy_term(weights, mask) + gamma * worst;
}

ExactEntropyResult solve_exact_entropy(const Vector& mask, const Matrix& h, const ExactEntropyOptions& options) {
  if (h.rows() != mask.size()) throw ShapeError("function values must cover the mask");
  const Eigen::Index n = mask.size();
  std::vector<Eigen::Index> observed;
  for (Eigen::Index k = 0; k < n; ++k)
    if (mask(k) != 0.0) observed.push_back(k);
  if (observed.empty()) throw InfeasibleError("no observed pairs to carry the weights");
  if (observed.size() > options.max_observed)
    throw RequestError("exact entropy solver is limited to " + std::to_string(options.max_observed) +
                       " observed pairs");

  const Eigen::Index m = static_cast<Eigen::Index>(observed.size());
  const Eigen::Index jn = h.cols();
  const Vector target = h.colwise().mean().transpose();
  // Centered function values on the observed pairs: A(k, j) = h_j(x_k) - mean_D h_j.
  Matrix centered(m, jn);
  for (Eigen::Index r = 0; r < m; ++r) centered.row(r) = h.row(observed[static_cast<std::size_t>(r)]) - target.transpose();

  // Dual: f(lambda) = log sum_k exp(A_k lambda), convex. Its gradient is the
  // softmax-weighted mean of A, which is exactly tau under w = n * softmax.
  auto evaluate = [&](const Vector& lambda, Vector& probs) {
    const Vector z = centered * lambda;
    const double top = z.maxCoeff();
    probs = (z.array() - top).exp();
    const double total = probs.sum();
    probs /= total;
    return top + std::log(total);
  };

  Vector lambda = Vector::Zero(jn);
  Vector probs;
  double f = evaluate(lambda, probs);
  Vector grad = centered.transpose() * probs;
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (grad.size() == 0 || grad.cwiseAbs().maxCoeff() <= options.gradient_tolerance) break;
    Matrix hess = centered.transpose() * probs.asDiagonal() * centered - grad * grad.transpose();
    const Vector step = -hess.completeOrthogonalDecomposition().solve(grad);
    double t = 1.0;
    Vector trial_probs;
    double trial_f = f;
    const double slope = grad.dot(step);
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector trial = lambda + t * step;
      trial_f = evaluate(trial, trial_probs);
      if (std::isfinite(trial_f) && trial_f <= f + 1e-4 * t * slope) {
        lambda = trial;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // Newton direction exhausted; a plain gradient step keeps progress when
      // the curvature estimate is unreliable.
      const Vector trial = lambda - grad;
      trial_f = evaluate(trial, trial_probs);
      if (!(trial_f < f)) break;
      lambda = trial;
    }
    f = trial_f;
    probs = trial_probs;
    grad = centered.transpose() * probs;
    if (lambda.norm() > 1e8 || f < -50.0) break;  // dual unbounded below: constraints infeasible
  }

  ExactEntropyResult result;
  result.weights = Vector::Zero(n);
  for (Eigen::Index r = 0; r < m; ++r) result.weights(observed[static_cast<std::size_t>(r)]) = static_cast<double>(n) * probs(r);
  result.multipliers = lambda;
  result.iterations = iter;

  const Vector taus = residuals(result.weights, mask, h);
  Eigen::Index worst = 0;
  const double max_tau = taus.size() ? taus.cwiseAbs().maxCoeff(&worst) : 0.0;
  if (!(max_tau <= 1e-8) || !result.weights.allFinite()) {
    throw InfeasibleError("balancing constraints infeasible: constraint " + std::to_string(worst + 1) +
                          " has residual " + std::to_string(taus.size() ? taus(worst) : 0.0));
  }
  double objective = 0.0;
  for (Eigen::Index k : observed) {
    const double w = result.weights(k);
    if (w > 0.0) objective += w * std::log(w);
  }
  result.objective = objective;
  return result;
}

}  // namespace kbcf
