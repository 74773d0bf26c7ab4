#include "kbcf/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "kbcf/error.hpp"
#include "kbcf/parallel.hpp"

namespace kbcf {

namespace {

void require_length(const Vector& v, std::size_t n, const char* what) {
  if (static_cast<std::size_t>(v.size()) != n) throw ShapeError(std::string(what) + " must cover the batch");
}

const Vector& need(const std::optional<Vector>& v, const char* what) {
  if (!v) throw ConfigError(std::string("loss needs ") + what);
  return *v;
}

}  // namespace

Vector batch_mask(const Dataset& dataset, std::span<const Pair> pairs) {
  Vector mask(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) mask(static_cast<Eigen::Index>(k)) = dataset.observed(pairs[k]) ? 1.0 : 0.0;
  return mask;
}

Vector batch_errors(const FactorizationModel& prediction, const Dataset& dataset, std::span<const Pair> pairs,
                    ErrorForm form) {
  const Vector predictions = parallel::predict(prediction, pairs);
  Vector errors = Vector::Zero(predictions.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (!dataset.observed(pairs[k])) continue;
    const auto r = static_cast<Eigen::Index>(k);
    errors(r) = pointwise_error(predictions(r), dataset.rating(pairs[k]), form).value;
  }
  return errors;
}

Vector batch_true_errors(const FactorizationModel& prediction, const Dataset& dataset,
                         std::span<const Pair> pairs, ErrorForm form) {
  if (!dataset.test) throw UnavailableError("ground-truth errors need an outcome grid");
  const OutcomeGrid& truth = *dataset.test;
  const Vector predictions = parallel::predict(prediction, pairs);
  Vector errors(predictions.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Pair p = pairs[k];
    if (!truth.mask(p.user, p.item)) throw UnavailableError("ground truth missing for a pair");
    const auto r = static_cast<Eigen::Index>(k);
    errors(r) = pointwise_error(predictions(r), truth.outcomes(p.user, p.item), form).value;
  }
  return errors;
}

LossGradient prediction_loss_gradient(const FactorizationModel& prediction, const Dataset& dataset,
                                      std::span<const Pair> pairs, const PredictionLossSpec& spec) {
  const std::size_t n = pairs.size();
  if (n == 0) throw RequestError("empty batch");
  const Vector predictions = parallel::predict(prediction, pairs);
  const Vector mask = batch_mask(dataset, pairs);
  const bool ideal = spec.estimator == Estimator::ideal;
  if (ideal && !dataset.test) throw UnavailableError("ideal loss needs ground truth");

  Vector outcomes(static_cast<Eigen::Index>(n));
  Vector errors = Vector::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    const Pair p = pairs[k];
    if (ideal) {
      if (!dataset.test->mask(p.user, p.item)) throw UnavailableError("ground truth missing for a pair");
      outcomes(r) = dataset.test->outcomes(p.user, p.item);
    } else {
      outcomes(r) = mask(r) != 0.0 ? dataset.rating(p) : 0.0;
    }
    if (ideal || mask(r) != 0.0) errors(r) = pointwise_error(predictions(r), outcomes(r), spec.form).value;
  }

  // Every estimator is sum_k c_k e_k plus terms free of the prediction model.
  Vector coef = Vector::Zero(static_cast<Eigen::Index>(n));
  const double nd = static_cast<double>(n);
  LossGradient out;
  switch (spec.estimator) {
    case Estimator::ideal:
      out.value = ideal_loss(errors);
      coef.setConstant(1.0 / nd);
      break;
    case Estimator::naive: {
      out.value = naive_loss(errors, mask);
      coef = mask / mask.sum();
      break;
    }
    case Estimator::ips:
    case Estimator::dr:
    case Estimator::snips: {
      const Vector& p = need(spec.propensities, "propensities");
      require_length(p, n, "propensities");
      Vector inv(static_cast<Eigen::Index>(n));
      for (Eigen::Index k = 0; k < inv.size(); ++k) inv(k) = mask(k) / std::max(p(k), spec.propensity_clip);
      if (spec.estimator == Estimator::ips) {
        out.value = ips_loss(errors, mask, p, spec.propensity_clip);
        coef = inv / nd;
      } else if (spec.estimator == Estimator::snips) {
        out.value = snips_loss(errors, mask, p, spec.propensity_clip);
        coef = inv / inv.sum();
      } else {
        const Vector& imputed = need(spec.imputed, "imputed errors");
        require_length(imputed, n, "imputed errors");
        out.value = dr_loss(errors, imputed, mask, p, spec.propensity_clip);
        coef = inv / nd;
      }
      break;
    }
    case Estimator::kbips:
    case Estimator::kbdr: {
      const Vector& w = need(spec.weights, "balancing weights");
      require_length(w, n, "weights");
      if (spec.estimator == Estimator::kbips) {
        out.value = kbips_loss(errors, mask, w);
      } else {
        const Vector& imputed = need(spec.imputed, "imputed errors");
        require_length(imputed, n, "imputed errors");
        out.value = kbdr_loss(errors, imputed, mask, w);
      }
      coef = mask.cwiseProduct(w) / nd;
      break;
    }
  }

  out.gradient = prediction.params.zeros_like();
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    if (coef(r) == 0.0) continue;
    const double d_pred = coef(r) * pointwise_error_derivative(predictions(r), outcomes(r), spec.form);
    prediction.backward(pairs[k], d_pred, out.gradient);
  }
  return out;
}

LossGradient imputation_loss_gradient(const FactorizationModel& imputation, std::span<const Pair> pairs,
                                      const Vector& errors, const Vector& mask, const Vector& weights) {
  const std::size_t n = pairs.size();
  if (n == 0) throw RequestError("empty batch");
  require_length(errors, n, "errors");
  require_length(mask, n, "mask");
  require_length(weights, n, "weights");
  const Vector imputed = parallel::predict(imputation, pairs);
  LossGradient out;
  out.value = imputation_loss(errors, imputed, mask, weights);
  out.gradient = imputation.params.zeros_like();
  const double nd = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    if (mask(r) == 0.0) continue;
    imputation.backward(pairs[k], 2.0 * weights(r) * (imputed(r) - errors(r)) / nd, out.gradient);
  }
  return out;
}

BatchWeights batch_weights(const FactorizationModel& weight, std::span<const Pair> pairs, const Vector& mask) {
  require_length(mask, pairs.size(), "mask");
  BatchWeights bw;
  bw.raw = parallel::predict(weight, pairs);
  bw.observed_raw_sum = mask.dot(bw.raw);
  if (!(bw.observed_raw_sum > 0.0)) throw RequestError("batch has no observed pairs to normalize the weights");
  bw.normalized = bw.raw * (static_cast<double>(pairs.size()) / bw.observed_raw_sum);
  return bw;
}

namespace {

// Pulls dL/dw_normalized back through w_k = n r_k / sum_l o_l r_l and the link.
Parameters normalized_backward(const FactorizationModel& weight, std::span<const Pair> pairs, const Vector& mask,
                               const BatchWeights& bw, const Vector& d_normalized) {
  const double n = static_cast<double>(pairs.size());
  const double s = bw.observed_raw_sum;
  double coupling = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k)
    if (mask(k) != 0.0) coupling += d_normalized(k) * bw.normalized(k);
  Parameters grad = weight.params.zeros_like();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    if (mask(r) == 0.0) continue;
    const double d_raw = (n * d_normalized(r) - coupling) / s;
    weight.backward(pairs[k], d_raw, grad);
  }
  return grad;
}

}  // namespace

BalancingGradient balancing_loss_gradient(const FactorizationModel& weight, std::span<const Pair> pairs,
                                          const Vector& mask, const Matrix& h, double gamma, double threshold) {
  const BatchWeights bw = batch_weights(weight, pairs, mask);
  BalancingGradient out;
  out.report = balancing_loss(bw.normalized, mask, h, gamma, threshold);
  out.loss.value = out.report.loss;

  const double n = static_cast<double>(pairs.size());
  Vector hinge_slope(h.cols());
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    const double tau = out.report.taus(j);
    hinge_slope(j) = tau > threshold ? 1.0 : (tau < -threshold ? -1.0 : 0.0);
  }
  const Vector penalty_dir = h * hinge_slope;
  Vector d_w = Vector::Zero(mask.size());
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    if (mask(k) == 0.0) continue;
    d_w(k) = (std::log(bw.normalized(k)) + 1.0) / n + gamma * penalty_dir(k) / n;
  }
  out.loss.gradient = normalized_backward(weight, pairs, mask, bw, d_w);
  return out;
}

LossGradient wkb_loss_gradient(const FactorizationModel& weight, std::span<const Pair> pairs, const Vector& mask,
                               const GramMatrix& gram, double gamma, WorstCaseForm form) {
  if (gram.size() != static_cast<Eigen::Index>(pairs.size())) throw ShapeError("Gram must be built on the batch");
  const BatchWeights bw = batch_weights(weight, pairs, mask);
  LossGradient out;
  out.value = wkb_loss(bw.normalized, mask, gram, gamma, form);
  const double n = static_cast<double>(pairs.size());
  Vector v(mask.size());
  for (Eigen::Index k = 0; k < mask.size(); ++k) v(k) = (mask(k) != 0.0 ? bw.normalized(k) : 0.0) - 1.0;
  // d/dv of v'Gv/n^2 is 2Gv/n^2; of |Pv|^2/n it is 2Pv/n.
  const Vector dv = form == WorstCaseForm::rkhs_ball ? Vector(2.0 * (gram.entries * v) / (n * n))
                                                     : Vector(2.0 * (range_projector(gram) * v) / n);
  Vector d_w = Vector::Zero(mask.size());
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    if (mask(k) == 0.0) continue;
    d_w(k) = (std::log(bw.normalized(k)) + 1.0) / n + gamma * dv(k);
  }
  out.gradient = normalized_backward(weight, pairs, mask, bw, d_w);
  return out;
}

LossGradient propensity_loss_gradient(const FactorizationModel& propensity, std::span<const Pair> pairs,
                                      const Vector& mask) {
  require_length(mask, pairs.size(), "mask");
  const Vector p = parallel::predict(propensity, pairs);
  LossGradient out;
  out.value = propensity_ce_loss(p, mask);
  out.gradient = propensity.params.zeros_like();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    if (p(r) < kPredictionClip || p(r) > 1.0 - kPredictionClip) continue;
    const double d = mask(r) != 0.0 ? -1.0 / p(r) : 1.0 / (1.0 - p(r));
    propensity.backward(pairs[k], d, out.gradient);
  }
  return out;
}

LossKind parse_loss_kind(const std::string& name) {
  static const std::pair<const char*, LossKind> table[] = {
      {"ideal", LossKind::ideal},           {"naive", LossKind::naive},
      {"ips", LossKind::ips},               {"snips", LossKind::snips},
      {"dr", LossKind::dr},                 {"kbips", LossKind::kbips},
      {"kbdr", LossKind::kbdr},             {"imputation", LossKind::imputation},
      {"balancing", LossKind::balancing},   {"worst_case", LossKind::worst_case},
      {"propensity_ce", LossKind::propensity_ce}};
  for (const auto& [key, kind] : table)
    if (name == key) return kind;
  throw ConfigError("unknown loss: " + name);
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ideal: return "ideal";
    case LossKind::naive: return "naive";
    case LossKind::ips: return "ips";
    case LossKind::snips: return "snips";
    case LossKind::dr: return "dr";
    case LossKind::kbips: return "kbips";
    case LossKind::kbdr: return "kbdr";
    case LossKind::imputation: return "imputation";
    case LossKind::balancing: return "balancing";
    case LossKind::worst_case: return "worst_case";
    case LossKind::propensity_ce: return "propensity_ce";
  }
  return "?";
}

ModelRole target_role(LossKind kind) {
  switch (kind) {
    case LossKind::imputation: return ModelRole::imputation;
    case LossKind::balancing:
    case LossKind::worst_case: return ModelRole::weight;
    case LossKind::propensity_ce: return ModelRole::propensity;
    default: return ModelRole::prediction;
  }
}

LossGradient analytic_gradients(const ModelBundle& bundle, ModelRole role, const Dataset& dataset,
                                std::span<const Pair> pairs, const LossSpec& spec) {
  if (target_role(spec.kind) != role)
    throw ConfigError("loss " + to_string(spec.kind) + " does not train the requested model");
  const Vector mask = batch_mask(dataset, pairs);
  switch (spec.kind) {
    case LossKind::imputation: {
      const Vector& errors = need(spec.errors, "prediction errors");
      const Vector& weights = need(spec.weights, "weights");
      return imputation_loss_gradient(bundle.imputation, pairs, errors, mask, weights);
    }
    case LossKind::balancing:
      return balancing_loss_gradient(bundle.weight, pairs, mask, spec.h, spec.gamma, spec.threshold).loss;
    case LossKind::worst_case:
      if (!spec.gram) throw ConfigError("worst-case loss needs a Gram matrix");
      return wkb_loss_gradient(bundle.weight, pairs, mask, *spec.gram, spec.gamma, spec.worst_case_form);
    case LossKind::propensity_ce:
      if (!bundle.propensity) throw ConfigError("bundle has no propensity model");
      return propensity_loss_gradient(*bundle.propensity, pairs, mask);
    default: {
      PredictionLossSpec p;
      p.estimator = parse_estimator(to_string(spec.kind));
      p.form = spec.form;
      p.propensities = spec.propensities;
      p.weights = spec.weights;
      p.imputed = spec.imputed;
      p.propensity_clip = spec.propensity_clip;
      return prediction_loss_gradient(bundle.prediction, dataset, pairs, p);
    }
  }
}

}  // namespace kbcf
