#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "kbcf/types.hpp"

namespace kbcf {

// Vectors below run over a population of pairs (a batch or all of D). `mask`
// holds o in {0, 1}; entries of `errors` at unobserved pairs are never read.

inline constexpr double kPredictionClip = 1e-8;
// Largest cross-entropy error after clipping, -log(1e-8).
inline const double kMaxError = -std::log(kPredictionClip);
inline constexpr double kDefaultPropensityClip = 0.05;

enum class ErrorForm { cross_entropy, squared };

ErrorForm parse_error_form(const std::string& name);

struct PointwiseError {
  double value = 0.0;
  ErrorForm form = ErrorForm::cross_entropy;
};

PointwiseError pointwise_error(double prediction, double outcome, ErrorForm form);
// d error / d prediction; zero where the prediction is clipped.
double pointwise_error_derivative(double prediction, double outcome, ErrorForm form);

enum class Estimator { ideal, naive, ips, snips, dr, kbips, kbdr };

Estimator parse_estimator(const std::string& name);
std::string to_string(Estimator estimator);

double ideal_loss(const Vector& errors);
double naive_loss(const Vector& errors, const Vector& mask);
double ips_loss(const Vector& errors, const Vector& mask, const Vector& propensities,
                double clip = kDefaultPropensityClip);
double snips_loss(const Vector& errors, const Vector& mask, const Vector& propensities,
                  double clip = kDefaultPropensityClip);
double kbips_loss(const Vector& errors, const Vector& mask, const Vector& weights);
double dr_loss(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& propensities,
               double clip = kDefaultPropensityClip);
double kbdr_loss(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& weights);

// (1/|D|) sum o w (e_hat - e)^2
double imputation_loss(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& weights);

// sum -o log p - (1 - o) log(1 - p), p clipped into [1e-8, 1 - 1e-8].
double propensity_ce_loss(const Vector& propensities, const Vector& mask);

struct BiasReport {
  double bias_sq = 0.0;
  double signed_bias = 0.0;  // estimate - ideal
};

// {estimate - ideal}^2 against the full-grid errors.
BiasReport empirical_bias(double estimate, const Vector& full_errors);

// Signed decompositions: (1/|D|) sum (o w - 1) e and (1/|D|) sum (o w - 1)(e - e_hat).
double kbips_signed_bias(const Vector& errors, const Vector& mask, const Vector& weights);
double kbdr_signed_bias(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& weights);

struct EstimatorReport {
  Estimator name = Estimator::naive;
  double value = 0.0;
  std::optional<double> bias_sq;
  std::optional<double> max_abs_tau;
};

// Inputs for evaluating any estimator on one population.
struct EstimatorInputs {
  Vector errors;
  Vector mask;
  std::optional<Vector> full_errors;   // ground truth, for ideal and bias
  std::optional<Vector> propensities;  // ips / snips / dr
  std::optional<Vector> weights;       // kbips / kbdr
  std::optional<Vector> imputed;       // dr / kbdr
  double propensity_clip = kDefaultPropensityClip;
};

EstimatorReport evaluate_estimator(Estimator name, const EstimatorInputs& inputs);

}  // namespace kbcf
