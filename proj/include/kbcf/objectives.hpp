#pragma once

#include <optional>
#include <span>
#include <string>

#include "kbcf/balancing.hpp"
#include "kbcf/data.hpp"
#include "kbcf/estimators.hpp"
#include "kbcf/kernel.hpp"
#include "kbcf/model.hpp"

namespace kbcf {

// Closed-form backward passes for every training loss. Each returns the loss
// value on the batch and its gradient with respect to one model's parameters.

struct LossGradient {
  double value = 0.0;
  Parameters gradient;
};

// Observation indicators of the batch as 0/1 doubles.
Vector batch_mask(const Dataset& dataset, std::span<const Pair> pairs);

// Pointwise errors of the model's predictions against observed outcomes;
// zero at unobserved pairs.
Vector batch_errors(const FactorizationModel& prediction, const Dataset& dataset, std::span<const Pair> pairs,
                    ErrorForm form);

// Same against the ground-truth grid (test outcomes); every pair must be covered.
Vector batch_true_errors(const FactorizationModel& prediction, const Dataset& dataset,
                         std::span<const Pair> pairs, ErrorForm form);

struct PredictionLossSpec {
  Estimator estimator = Estimator::naive;
  ErrorForm form = ErrorForm::cross_entropy;
  std::optional<Vector> propensities;  // ips / snips / dr, over the batch
  std::optional<Vector> weights;       // kbips / kbdr, over the batch
  std::optional<Vector> imputed;       // dr / kbdr, over the batch
  double propensity_clip = kDefaultPropensityClip;
};

// Gradient with respect to the prediction model; propensities, weights and
// imputed errors are treated as constants.
LossGradient prediction_loss_gradient(const FactorizationModel& prediction, const Dataset& dataset,
                                      std::span<const Pair> pairs, const PredictionLossSpec& spec);

// L_e with respect to the imputation model.
LossGradient imputation_loss_gradient(const FactorizationModel& imputation, std::span<const Pair> pairs,
                                      const Vector& errors, const Vector& mask, const Vector& weights);

// Weight-model output on a batch, rescaled so that (1/|B|) sum o w = 1.
struct BatchWeights {
  Vector raw;
  Vector normalized;
  double observed_raw_sum = 0.0;
};

BatchWeights batch_weights(const FactorizationModel& weight, std::span<const Pair> pairs, const Vector& mask);

// L_w evaluated on batch-normalized weights; the gradient includes the
// normalization Jacobian.
struct BalancingGradient {
  LossGradient loss;
  BalanceReport report;
};

BalancingGradient balancing_loss_gradient(const FactorizationModel& weight, std::span<const Pair> pairs,
                                          const Vector& mask, const Matrix& h, double gamma, double threshold);

// Worst-case kernel balancing objective on batch-normalized weights.
LossGradient wkb_loss_gradient(const FactorizationModel& weight, std::span<const Pair> pairs, const Vector& mask,
                               const GramMatrix& gram, double gamma,
                               WorstCaseForm form = WorstCaseForm::rkhs_ball);

// Cross-entropy propensity loss with respect to the propensity model.
LossGradient propensity_loss_gradient(const FactorizationModel& propensity, std::span<const Pair> pairs,
                                      const Vector& mask);

enum class ModelRole { prediction, imputation, weight, propensity };

enum class LossKind { ideal, naive, ips, snips, dr, kbips, kbdr, imputation, balancing, worst_case, propensity_ce };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);
ModelRole target_role(LossKind kind);

// Everything any loss may need; unused fields are ignored.
struct LossSpec {
  LossKind kind = LossKind::naive;
  ErrorForm form = ErrorForm::cross_entropy;
  std::optional<Vector> propensities;
  std::optional<Vector> weights;
  std::optional<Vector> imputed;
  std::optional<Vector> errors;  // imputation loss targets
  Matrix h;                      // balancing function values over the batch
  const GramMatrix* gram = nullptr;
  WorstCaseForm worst_case_form = WorstCaseForm::rkhs_ball;
  double gamma = 0.0;
  double threshold = 0.0;
  double propensity_clip = kDefaultPropensityClip;
};

// Dispatches on the loss; throws ConfigError when the loss does not train `role`.
LossGradient analytic_gradients(const ModelBundle& bundle, ModelRole role, const Dataset& dataset,
                                std::span<const Pair> pairs, const LossSpec& spec);

}  // namespace kbcf
