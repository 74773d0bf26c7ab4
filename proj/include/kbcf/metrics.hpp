#pragma once

#include <span>
#include <vector>

#include "kbcf/data.hpp"
#include "kbcf/types.hpp"

namespace kbcf {

struct MetricReport {
  double auc = 0.0;
  double ndcg_at_k = 0.0;
  double f1_at_k = 0.0;
  int k = 5;
  int n_eval_users = 0;
};

// Probability that a random positive outscores a random negative, ties 0.5.
// Computed globally over all given pairs.
double auc(std::span<const double> scores, std::span<const double> labels);

// One user's candidate items, listed in item order. Equal scores keep that
// order when ranked, so ties go to the lower item index.
struct UserRanking {
  std::vector<double> scores;
  std::vector<double> labels;
};

// Mean over users with at least one positive of DCG@k / IDCG@k, binary gains
// and 1 / log2(rank + 1) discounts.
double ndcg_at_k(std::span<const UserRanking> users, int k);

// Mean over users with at least one positive of the harmonic mean of
// precision@k (hits / k) and recall@k.
double f1_at_k(std::span<const UserRanking> users, int k);

// Builds per-user rankings from a score grid over the test cells (optionally
// restricted to `subset`) and evaluates all three metrics.
MetricReport evaluate_metrics(const Matrix& scores, const OutcomeGrid& test, int k, const Mask* subset = nullptr);

}  // namespace kbcf
