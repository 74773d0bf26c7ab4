#include "kbcf/estimators.hpp"

#include <algorithm>

#include "kbcf/error.hpp"

namespace kbcf {

namespace {

void require_same(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string("length mismatch: ") + what);
}

double inverse_propensity(double p, double clip) { return 1.0 / std::max(p, clip); }

double population(const Vector& mask) {
  if (mask.size() == 0) throw UnavailableError("empty population");
  return static_cast<double>(mask.size());
}

}  // namespace

ErrorForm parse_error_form(const std::string& name) {
  if (name == "cross_entropy" || name == "ce") return ErrorForm::cross_entropy;
  if (name == "squared" || name == "mse") return ErrorForm::squared;
  throw ConfigError("unknown error form: " + name);
}

PointwiseError pointwise_error(double prediction, double outcome, ErrorForm form) {
  if (form == ErrorForm::squared) {
    const double d = prediction - outcome;
    return {d * d, form};
  }
  const double p = std::clamp(prediction, kPredictionClip, 1.0 - kPredictionClip);
  return {-outcome * std::log(p) - (1.0 - outcome) * std::log(1.0 - p), form};
}

double pointwise_error_derivative(double prediction, double outcome, ErrorForm form) {
  if (form == ErrorForm::squared) return 2.0 * (prediction - outcome);
  if (prediction < kPredictionClip || prediction > 1.0 - kPredictionClip) return 0.0;
  return -outcome / prediction + (1.0 - outcome) / (1.0 - prediction);
}

Estimator parse_estimator(const std::string& name) {
  if (name == "ideal") return Estimator::ideal;
  if (name == "naive") return Estimator::naive;
  if (name == "ips") return Estimator::ips;
  if (name == "snips") return Estimator::snips;
  if (name == "dr") return Estimator::dr;
  if (name == "kbips") return Estimator::kbips;
  if (name == "kbdr") return Estimator::kbdr;
  throw ConfigError("unknown estimator: " + name);
}

std::string to_string(Estimator estimator) {
  switch (estimator) {
    case Estimator::ideal: return "ideal";
    case Estimator::naive: return "naive";
    case Estimator::ips: return "ips";
    case Estimator::snips: return "snips";
    case Estimator::dr: return "dr";
    case Estimator::kbips: return "kbips";
    case Estimator::kbdr: return "kbdr";
  }
  return "?";
}

double ideal_loss(const Vector& errors) {
  if (errors.size() == 0) throw UnavailableError("ideal loss needs ground-truth errors for every pair");
  return errors.mean();
}

double naive_loss(const Vector& errors, const Vector& mask) {
  require_same(errors, mask, "errors/mask");
  double sum = 0.0;
  double count = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    if (mask(k) == 0.0) continue;
    sum += errors(k);
    count += 1.0;
  }
  if (count == 0.0) throw UnavailableError("naive loss needs at least one observed pair");
  return sum / count;
}

double ips_loss(const Vector& errors, const Vector& mask, const Vector& propensities, double clip) {
  require_same(errors, mask, "errors/mask");
  require_same(mask, propensities, "mask/propensities");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k)
    if (mask(k) != 0.0) sum += errors(k) * inverse_propensity(propensities(k), clip);
  return sum / population(mask);
}

double snips_loss(const Vector& errors, const Vector& mask, const Vector& propensities, double clip) {
  require_same(errors, mask, "errors/mask");
  require_same(mask, propensities, "mask/propensities");
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    if (mask(k) == 0.0) continue;
    const double w = inverse_propensity(propensities(k), clip);
    num += errors(k) * w;
    den += w;
  }
  if (den == 0.0) throw UnavailableError("SNIPS denominator is zero (no observed pairs)");
  return num / den;
}

double kbips_loss(const Vector& errors, const Vector& mask, const Vector& weights) {
  require_same(errors, mask, "errors/mask");
  require_same(mask, weights, "mask/weights");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k)
    if (mask(k) != 0.0) sum += weights(k) * errors(k);
  return sum / population(mask);
}

double dr_loss(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& propensities,
               double clip) {
  require_same(errors, mask, "errors/mask");
  require_same(imputed, mask, "imputed/mask");
  require_same(mask, propensities, "mask/propensities");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    sum += imputed(k);
    if (mask(k) != 0.0) sum += (errors(k) - imputed(k)) * inverse_propensity(propensities(k), clip);
  }
  return sum / population(mask);
}

double kbdr_loss(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& weights) {
  require_same(errors, mask, "errors/mask");
  require_same(imputed, mask, "imputed/mask");
  require_same(mask, weights, "mask/weights");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    sum += imputed(k);
    if (mask(k) != 0.0) sum += weights(k) * (errors(k) - imputed(k));
  }
  return sum / population(mask);
}

double imputation_loss(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& weights) {
  require_same(errors, mask, "errors/mask");
  require_same(imputed, mask, "imputed/mask");
  require_same(mask, weights, "mask/weights");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    if (mask(k) == 0.0) continue;
    const double d = imputed(k) - errors(k);
    sum += weights(k) * d * d;
  }
  return sum / population(mask);
}

double propensity_ce_loss(const Vector& propensities, const Vector& mask) {
  require_same(propensities, mask, "propensities/mask");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    const double p = std::clamp(propensities(k), kPredictionClip, 1.0 - kPredictionClip);
    sum += mask(k) != 0.0 ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum;
}

BiasReport empirical_bias(double estimate, const Vector& full_errors) {
  const double signed_bias = estimate - ideal_loss(full_errors);
  return {signed_bias * signed_bias, signed_bias};
}

double kbips_signed_bias(const Vector& errors, const Vector& mask, const Vector& weights) {
  require_same(errors, mask, "errors/mask");
  require_same(mask, weights, "mask/weights");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    const double ow = mask(k) != 0.0 ? weights(k) : 0.0;
    sum += (ow - 1.0) * errors(k);
  }
  return sum / population(mask);
}

double kbdr_signed_bias(const Vector& errors, const Vector& imputed, const Vector& mask, const Vector& weights) {
  require_same(errors, mask, "errors/mask");
  require_same(imputed, mask, "imputed/mask");
  require_same(mask, weights, "mask/weights");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    const double ow = mask(k) != 0.0 ? weights(k) : 0.0;
    sum += (ow - 1.0) * (errors(k) - imputed(k));
  }
  return sum / population(mask);
}

EstimatorReport evaluate_estimator(Estimator name, const EstimatorInputs& in) {
  auto need = [&](const std::optional<Vector>& v, const char* what) -> const Vector& {
    if (!v) throw UnavailableError(to_string(name) + " needs " + what);
    return *v;
  };
  EstimatorReport report;
  report.name = name;
  switch (name) {
    case Estimator::ideal: report.value = ideal_loss(need(in.full_errors, "ground-truth errors")); break;
    case Estimator::naive: report.value = naive_loss(in.errors, in.mask); break;
    case Estimator::ips:
      report.value = ips_loss(in.errors, in.mask, need(in.propensities, "propensities"), in.propensity_clip);
      break;
    case Estimator::snips:
      report.value = snips_loss(in.errors, in.mask, need(in.propensities, "propensities"), in.propensity_clip);
      break;
    case Estimator::dr:
      report.value = dr_loss(in.errors, need(in.imputed, "imputed errors"), in.mask,
                             need(in.propensities, "propensities"), in.propensity_clip);
      break;
    case Estimator::kbips: report.value = kbips_loss(in.errors, in.mask, need(in.weights, "weights")); break;
    case Estimator::kbdr:
      report.value = kbdr_loss(in.errors, need(in.imputed, "imputed errors"), in.mask, need(in.weights, "weights"));
      break;
  }
  if (in.full_errors) report.bias_sq = empirical_bias(report.value, *in.full_errors).bias_sq;
  return report;
}

}  // namespace kbcf
