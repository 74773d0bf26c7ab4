#include "kbcf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kbcf/error.hpp"

namespace kbcf {

namespace {

std::vector<std::size_t> rank_order(const UserRanking& user) {
  std::vector<std::size_t> order(user.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return user.scores[a] > user.scores[b]; });
  return order;
}

void check_k(int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
}

bool has_positive(const UserRanking& user) {
  return std::any_of(user.labels.begin(), user.labels.end(), [](double l) { return l > 0.5; });
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney U with average ranks for tied scores.
  double positive_rank_sum = 0.0;
  double positives = 0.0;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start;
    while (end < n && scores[order[end]] == scores[order[start]]) ++end;
    const double avg_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t t = start; t < end; ++t) {
      if (labels[order[t]] > 0.5) {
        positive_rank_sum += avg_rank;
        positives += 1.0;
      }
    }
    start = end;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) throw UnavailableError("AUC needs both positive and negative labels");
  return (positive_rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double ndcg_at_k(std::span<const UserRanking> users, int k) {
  check_k(k);
  double total = 0.0;
  int counted = 0;
  for (const UserRanking& user : users) {
    if (!has_positive(user)) continue;
    const auto order = rank_order(user);
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    double dcg = 0.0;
    for (std::size_t r = 0; r < depth; ++r)
      if (user.labels[order[r]] > 0.5) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    const auto n_pos = static_cast<std::size_t>(std::count_if(user.labels.begin(), user.labels.end(),
                                                              [](double l) { return l > 0.5; }));
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(depth, n_pos); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    total += dcg / idcg;
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

double f1_at_k(std::span<const UserRanking> users, int k) {
  check_k(k);
  double total = 0.0;
  int counted = 0;
  for (const UserRanking& user : users) {
    if (!has_positive(user)) continue;
    const auto order = rank_order(user);
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    double hits = 0.0;
    for (std::size_t r = 0; r < depth; ++r)
      if (user.labels[order[r]] > 0.5) hits += 1.0;
    const double n_pos = static_cast<double>(std::count_if(user.labels.begin(), user.labels.end(),
                                                           [](double l) { return l > 0.5; }));
    const double precision = hits / k;
    const double recall = hits / n_pos;
    total += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

MetricReport evaluate_metrics(const Matrix& scores, const OutcomeGrid& test, int k, const Mask* subset) {
  check_k(k);
  if (scores.rows() != test.outcomes.rows() || scores.cols() != test.outcomes.cols())
    throw ShapeError("score grid and test grid differ in shape");
  std::vector<double> flat_scores;
  std::vector<double> flat_labels;
  std::vector<UserRanking> users(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index u = 0; u < scores.rows(); ++u) {
    for (Eigen::Index i = 0; i < scores.cols(); ++i) {
      if (!test.mask(u, i) || (subset && !(*subset)(u, i))) continue;
      flat_scores.push_back(scores(u, i));
      flat_labels.push_back(test.outcomes(u, i));
      users[static_cast<std::size_t>(u)].scores.push_back(scores(u, i));
      users[static_cast<std::size_t>(u)].labels.push_back(test.outcomes(u, i));
    }
  }
  MetricReport report;
  report.k = k;
  report.auc = auc(flat_scores, flat_labels);
  report.ndcg_at_k = ndcg_at_k(users, k);
  report.f1_at_k = f1_at_k(users, k);
  report.n_eval_users = static_cast<int>(std::count_if(users.begin(), users.end(), has_positive));
  return report;
}

}  // namespace kbcf
