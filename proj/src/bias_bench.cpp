#include "kbcf/bias_bench.hpp"

#include <cmath>
#include <json.hpp>

#include "kbcf/balancing.hpp"
#include "kbcf/error.hpp"
#include "kbcf/estimators.hpp"

namespace kbcf {

const BiasBenchRow& BiasBenchTable::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw RequestError("no bias-bench row named " + name);
}

BiasBenchTable run_bias_bench(const BiasBenchSpec& spec) {
  if (spec.resamples < 2) throw ConfigError("bias-bench needs at least 2 resamples");
  if (spec.exact_centers < 1) throw ConfigError("bias-bench needs at least 1 exact-balancing center");
  spec.kernel.validate();
  const Dataset base = generate_synthetic(spec.data);
  const PairList pairs = base.all_pairs();
  const auto n = static_cast<Eigen::Index>(pairs.size());

  Rng rng(spec.data.seed ^ 0xb1a5b1a5b1a5b1a5ULL);
  Rng prediction_rng = rng.fork(1);
  Rng center_rng = rng.fork(2);
  Rng mask_rng = rng.fork(3);

  // A pessimistic random scorer: errors are larger on positives, so selection
  // that favors positives moves the naive average away from the ideal loss.
  Vector errors(n), truth_p(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Pair p = pairs[static_cast<std::size_t>(k)];
    const double prediction = 0.05 + 0.4 * prediction_rng.uniform();
    errors(k) = pointwise_error(prediction, base.test->outcomes(p.user, p.item), ErrorForm::cross_entropy).value;
    truth_p(k) = (*base.true_propensities)(p.user, p.item);
  }
  const double ideal = ideal_loss(errors);
  const Vector true_w = truth_p.cwiseInverse();
  const Vector wrong_p = Vector::Constant(n, truth_p.mean());
  const Vector wrong_w = wrong_p.cwiseInverse();
  const Vector wrong_imp = Vector::Constant(n, ideal);

  // Exact-balancing row: errors built inside the span of the balanced functions.
  const FeatureMap features = FeatureMap::one_hot(base.n_users, base.n_items);
  Matrix centers(spec.exact_centers, features.dim());
  for (int j = 0; j < spec.exact_centers; ++j)
    centers.row(j) = features.vector(pairs[center_rng.below(pairs.size())]).transpose();
  BalancingFunctionSet fns;
  fns.kind = BalancingFunctionSet::Kind::kernel_centers;
  fns.spec = spec.kernel;
  fns.centers = centers;
  const Matrix h = fns.evaluate(features.rows(pairs));
  Vector coef(spec.exact_centers);
  for (int j = 0; j < spec.exact_centers; ++j) coef(j) = 1.0 + 0.5 * j * (j % 2 ? -1.0 : 1.0);
  const Vector span_errors = h * coef;
  const double span_ideal = ideal_loss(span_errors);
  ExactEntropyOptions exact_options;
  exact_options.max_observed = static_cast<std::size_t>(n);

  const std::vector<std::string> names = {"naive",
                                          "ips_true_p",
                                          "snips_true_p",
                                          "dr_true_p_wrong_imp",
                                          "dr_wrong_p_exact_imp",
                                          "kbips_true_w",
                                          "kbdr_true_w_wrong_imp",
                                          "kbdr_wrong_w_exact_imp",
                                          "kbips_exact_span"};
  std::vector<double> sum(names.size(), 0.0), sum_sq(names.size(), 0.0);
  for (int r = 0; r < spec.resamples; ++r) {
    const Dataset draw = redraw_observations(base, mask_rng);
    Vector mask(n);
    for (Eigen::Index k = 0; k < n; ++k) mask(k) = draw.observed(pairs[static_cast<std::size_t>(k)]) ? 1.0 : 0.0;
    if (mask.sum() == 0.0) throw UnavailableError("a redraw observed no pairs");
    const double clip = 1e-12;  // true propensities are already bounded away from zero
    const ExactEntropyResult exact = solve_exact_entropy(mask, h, exact_options);
    const double values[] = {
        naive_loss(errors, mask) - ideal,
        ips_loss(errors, mask, truth_p, clip) - ideal,
        snips_loss(errors, mask, truth_p, clip) - ideal,
        dr_loss(errors, wrong_imp, mask, truth_p, clip) - ideal,
        dr_loss(errors, errors, mask, wrong_p, clip) - ideal,
        kbips_loss(errors, mask, true_w) - ideal,
        kbdr_loss(errors, wrong_imp, mask, true_w) - ideal,
        kbdr_loss(errors, errors, mask, wrong_w) - ideal,
        kbips_loss(span_errors, mask, exact.weights) - span_ideal,
    };
    for (std::size_t k = 0; k < names.size(); ++k) {
      sum[k] += values[k];
      sum_sq[k] += values[k] * values[k];
    }
  }

  BiasBenchTable table;
  table.spec = spec;
  table.ideal = ideal;
  const double m = spec.resamples;
  for (std::size_t k = 0; k < names.size(); ++k) {
    BiasBenchRow row;
    row.name = names[k];
    row.mean_bias = sum[k] / m;
    row.mean_bias_sq = sum_sq[k] / m;
    const double var = std::max(0.0, (sum_sq[k] - m * row.mean_bias * row.mean_bias) / (m - 1.0));
    row.std_error = std::sqrt(var / m);
    table.rows.push_back(row);
  }
  return table;
}

std::string bias_bench_json(const BiasBenchTable& table) {
  nlohmann::ordered_json j;
  j["users"] = table.spec.data.n_users;
  j["items"] = table.spec.data.n_items;
  j["resamples"] = table.spec.resamples;
  j["seed"] = table.spec.data.seed;
  j["ideal"] = table.ideal;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : table.rows) {
    nlohmann::ordered_json row;
    row["name"] = r.name;
    row["mean_bias"] = r.mean_bias;
    row["std_error"] = r.std_error;
    row["mean_bias_sq"] = r.mean_bias_sq;
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace kbcf
