#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <span>
#include <vector>

#include "kbcf/balancing.hpp"
#include "kbcf/data.hpp"
#include "kbcf/estimators.hpp"
#include "kbcf/kernel.hpp"
#include "kbcf/metrics.hpp"
#include "kbcf/model.hpp"
#include "kbcf/rng.hpp"

namespace kbcf {

enum class Strategy { none, ce_propensity, rkb, wkb, akb, mb };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy strategy);

// Which pairs enter the kernel error fit of adaptive balancing.
enum class AkbFitScope { automatic, observed_only, imputed };

AkbFitScope parse_akb_fit_scope(const std::string& name);
std::string to_string(AkbFitScope scope);

// absolute: the kernel uses sigma_sq as given. median_relative: sigma_sq
// multiplies half the median squared distance between feature vectors,
// re-measured whenever the features are rebuilt.
enum class BandwidthMode { absolute, median_relative };

BandwidthMode parse_bandwidth_mode(const std::string& name);
std::string to_string(BandwidthMode mode);

// Half the median squared distance over up to `samples` random pairs of
// feature vectors; 0 when every sampled distance is 0.
double median_heuristic(const FeatureMap& features, std::span<const Pair> pool, std::size_t samples, Rng& rng);

struct TrainConfig {
  Strategy strategy = Strategy::none;
  Estimator estimator = Estimator::naive;
  KernelSpec kernel;
  BandwidthMode bandwidth = BandwidthMode::median_relative;
  int J = 10;
  double gamma = 5.0;
  double threshold = 1e-3;  // C
  double ridge = 1e-3;
  FeatureSource features = FeatureSource::embedding_concat;
  AkbFitScope akb_fit_scope = AkbFitScope::automatic;
  WorstCaseForm worst_case_form = WorstCaseForm::rkhs_ball;
  ErrorForm error_form = ErrorForm::cross_entropy;
  double propensity_clip = kDefaultPropensityClip;

  int embedding_dim = 8;
  double init_range = 0.01;

  int imputation_batch = 128;
  int weight_batch = 128;
  int prediction_batch = 128;
  int kernel_batch = 256;
  // 0 means one pass over the phase's population.
  int imputation_steps = 0;
  int weight_steps = 0;
  int prediction_steps = 0;

  int max_epochs = 50;
  int patience = 10;
  double validation_fraction = 0.1;  // share of a full ground-truth grid held out for early stopping
  int eval_k = 5;
  std::uint64_t seed = 0;

  AdamOptions prediction_opt{0.05, 1e-5};
  AdamOptions imputation_opt{0.05, 1e-5};
  AdamOptions weight_opt{0.05, 1e-5};
  AdamOptions propensity_opt{0.05, 1e-5};

  // Throws ConfigError on out-of-range values or incompatible strategy/estimator pairs.
  void validate() const;
};

// Flat "key = value" text; '#' starts a comment. Keys are the TrainConfig field
// names, with optimizer settings spelled lr_<model> / wd_<model>.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
// Canonical text: every key, sorted, with round-trippable values.
std::string config_to_text(const TrainConfig& config);
// FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  std::optional<double> imputation_loss;
  std::optional<double> weight_loss;
  std::optional<double> propensity_loss;
  double prediction_loss = 0.0;
  std::optional<double> validation_auc;
  std::optional<double> max_abs_tau;
  std::optional<BalanceReport> balance;
  PairList selected_centers;
  double wall_seconds = 0.0;  // not part of any written output
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_validation_auc = 0.0;
};

struct TrainResult {
  ModelBundle bundle;
  TrainTrace trace;
  std::optional<MetricReport> metrics;  // on the evaluation cells after restoring the best epoch; absent without a test grid
};

// Cells used for early stopping and for the final report. A full ground-truth
// grid is split at `validation_fraction`; a held-out test set serves as both.
struct EvaluationSplit {
  Mask validation;
  Mask evaluation;
};

EvaluationSplit make_evaluation_split(const Dataset& dataset, double validation_fraction, std::uint64_t seed);

// Alternating training of imputation, balancing weight and prediction models.
// Each phase updates only its own model.
class Trainer {
 public:
  Trainer(const Dataset& dataset, TrainConfig config);
  // Starts from an existing bundle instead of a fresh initialization.
  Trainer(const Dataset& dataset, TrainConfig config, ModelBundle initial);

  const ModelBundle& bundle() const { return bundle_; }
  const TrainConfig& config() const { return config_; }
  const TrainTrace& trace() const { return trace_; }
  const EvaluationSplit& split() const { return split_; }

  bool uses_imputation() const;
  bool uses_weight_phase() const;

  // Mean loss over the phase's steps.
  double run_imputation_phase();
  // Weight model (balancing strategies) or propensity model (ce_propensity).
  double run_weight_phase();
  double run_prediction_phase();

  // One outer iteration: imputation -> weights -> prediction, then validation.
  const EpochRecord& run_epoch();

  // Epochs until patience or max_epochs, then restores the best epoch's bundle.
  TrainResult run();

  // Functions balanced in the latest weight phase (kernel and moment strategies).
  const std::optional<BalancingFunctionSet>& last_functions() const { return functions_; }
  const std::optional<BalanceReport>& last_balance() const { return last_balance_; }
  const FeatureMap& last_features() const { return features_; }
  // Kernel with the bandwidth actually used in the latest weight phase.
  const KernelSpec& effective_kernel() const { return effective_kernel_; }

  // Rescales the weight model so (1/|B|) sum_B o w = 1 over the given pairs.
  void renormalize_weights(std::span<const Pair> pairs);

  // AUC of the prediction model on the validation cells; empty without a test grid.
  std::optional<double> validation_auc() const;

 private:
  void initialize();
  std::size_t steps_for(int configured, std::size_t population, int batch) const;
  PairList next_batch(DrawScope scope, std::size_t size);
  Vector current_weights(std::span<const Pair> pairs, const Vector& mask) const;
  Vector current_imputed(std::span<const Pair> pairs) const;
  void choose_functions();

  const Dataset& dataset_;
  TrainConfig config_;
  ModelBundle bundle_;
  Rng rng_;
  EvaluationSplit split_;
  OptimizerState prediction_state_;
  OptimizerState imputation_state_;
  OptimizerState weight_state_;
  std::optional<OptimizerState> propensity_state_;
  FeatureMap features_;
  KernelSpec effective_kernel_;
  std::optional<BalancingFunctionSet> functions_;
  std::optional<BalanceReport> last_balance_;
  std::optional<double> last_propensity_loss_;
  PairList all_pairs_;
  PairList observed_pairs_;
  TrainTrace trace_;
  int epoch_ = 0;
  bool initialized_ = false;
};

TrainResult train(const Dataset& dataset, const TrainConfig& config);

// Metrics of the prediction model on the test grid (optionally restricted).
MetricReport validate(const ModelBundle& bundle, const Dataset& dataset, int k, const Mask* subset = nullptr);

enum class SweepAxis { J, gamma, sigma_sq, C };

SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepPoint {
  double value = 0.0;
  MetricReport metrics;
  double best_validation_auc = 0.0;
  TrainTrace trace;
};

// One independent train + validate per value, all with the base seed.
std::vector<SweepPoint> sweep(const Dataset& dataset, const TrainConfig& base, SweepAxis axis,
                              const std::vector<double>& values);

}  // namespace kbcf
