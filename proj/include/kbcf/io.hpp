#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kbcf/estimators.hpp"
#include "kbcf/metrics.hpp"
#include "kbcf/training.hpp"

namespace kbcf {

// One JSON object per line: {name, value, bias_sq?, max_abs_tau?, epoch, seed}.
std::string estimator_report_json(const EstimatorReport& report, int epoch, std::uint64_t seed);

// {"auc", "ndcg@k", "f1@k", "k", "n_eval_users", "seed"}
std::string metric_report_json(const MetricReport& report, std::uint64_t seed);

// Header "value,auc,ndcg,f1,seed".
std::string sweep_csv(const std::vector<SweepPoint>& points, std::uint64_t seed);

// One row per epoch; empty cells for phases that did not run. Wall-clock is left out.
std::string trace_csv(const TrainTrace& trace);

// Header "epoch,strategy,J,gamma,C,max_abs_tau,entropy,penalty"; epochs without a balance report are skipped.
std::string diagnostics_csv(const TrainTrace& trace, const TrainConfig& config);

// %.17g, so values read back exactly.
std::string format_double(double value);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace kbcf
