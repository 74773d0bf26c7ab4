#include "kbcf/io.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "kbcf/error.hpp"

namespace kbcf {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string estimator_report_json(const EstimatorReport& report, int epoch, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["name"] = to_string(report.name);
  j["value"] = report.value;
  if (report.bias_sq) j["bias_sq"] = *report.bias_sq;
  if (report.max_abs_tau) j["max_abs_tau"] = *report.max_abs_tau;
  j["epoch"] = epoch;
  j["seed"] = seed;
  return j.dump();
}

std::string metric_report_json(const MetricReport& report, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["auc"] = report.auc;
  j["ndcg@k"] = report.ndcg_at_k;
  j["f1@k"] = report.f1_at_k;
  j["k"] = report.k;
  j["n_eval_users"] = report.n_eval_users;
  j["seed"] = seed;
  return j.dump();
}

std::string sweep_csv(const std::vector<SweepPoint>& points, std::uint64_t seed) {
  std::string out = "value,auc,ndcg,f1,seed\n";
  for (const auto& p : points)
    out += format_double(p.value) + "," + format_double(p.metrics.auc) + "," + format_double(p.metrics.ndcg_at_k) +
           "," + format_double(p.metrics.f1_at_k) + "," + std::to_string(seed) + "\n";
  return out;
}

std::string trace_csv(const TrainTrace& trace) {
  std::string out =
      "epoch,imputation_loss,weight_loss,propensity_loss,prediction_loss,validation_auc,max_abs_tau,selected_centers\n";
  for (const auto& r : trace.epochs) {
    std::string centers;
    for (const Pair& p : r.selected_centers) {
      if (!centers.empty()) centers += ";";
      centers += std::to_string(p.user) + ":" + std::to_string(p.item);
    }
    out += std::to_string(r.epoch) + "," + cell(r.imputation_loss) + "," + cell(r.weight_loss) + "," +
           cell(r.propensity_loss) + "," + format_double(r.prediction_loss) + "," + cell(r.validation_auc) + "," +
           cell(r.max_abs_tau) + "," + centers + "\n";
  }
  return out;
}

std::string diagnostics_csv(const TrainTrace& trace, const TrainConfig& config) {
  std::string out = "epoch,strategy,J,gamma,C,max_abs_tau,entropy,penalty\n";
  for (const auto& r : trace.epochs) {
    if (!r.balance) continue;
    out += std::to_string(r.epoch) + "," + to_string(config.strategy) + "," + std::to_string(config.J) + "," +
           format_double(config.gamma) + "," + format_double(config.threshold) + "," +
           format_double(r.balance->max_abs_tau) + "," + format_double(r.balance->entropy_term) + "," +
           format_double(r.balance->penalty_term) + "\n";
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace kbcf
