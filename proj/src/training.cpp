#include "kbcf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <sstream>

#include "kbcf/error.hpp"
#include "kbcf/objectives.hpp"
#include "kbcf/parallel.hpp"

namespace kbcf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || *end != '\0') throw ConfigError("config key " + key + ": not a number: " + value);
  return v;
}

long long to_integer(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0') throw ConfigError("config key " + key + ": not an integer: " + value);
  return v;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "none") return Strategy::none;
  if (name == "ce_propensity") return Strategy::ce_propensity;
  if (name == "rkb") return Strategy::rkb;
  if (name == "wkb") return Strategy::wkb;
  if (name == "akb") return Strategy::akb;
  if (name == "mb") return Strategy::mb;
  throw ConfigError("unknown strategy: " + name);
}

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::none: return "none";
    case Strategy::ce_propensity: return "ce_propensity";
    case Strategy::rkb: return "rkb";
    case Strategy::wkb: return "wkb";
    case Strategy::akb: return "akb";
    case Strategy::mb: return "mb";
  }
  return "?";
}

AkbFitScope parse_akb_fit_scope(const std::string& name) {
  if (name == "auto" || name == "automatic") return AkbFitScope::automatic;
  if (name == "observed_only") return AkbFitScope::observed_only;
  if (name == "imputed") return AkbFitScope::imputed;
  throw ConfigError("unknown akb_fit_scope: " + name);
}

std::string to_string(AkbFitScope scope) {
  switch (scope) {
    case AkbFitScope::automatic: return "auto";
    case AkbFitScope::observed_only: return "observed_only";
    case AkbFitScope::imputed: return "imputed";
  }
  return "?";
}

BandwidthMode parse_bandwidth_mode(const std::string& name) {
  if (name == "absolute") return BandwidthMode::absolute;
  if (name == "median_relative" || name == "median") return BandwidthMode::median_relative;
  throw ConfigError("unknown bandwidth mode: " + name);
}

std::string to_string(BandwidthMode mode) {
  return mode == BandwidthMode::absolute ? "absolute" : "median_relative";
}

double median_heuristic(const FeatureMap& features, std::span<const Pair> pool, std::size_t samples, Rng& rng) {
  if (pool.size() < 2 || samples == 0) return 0.0;
  std::vector<double> d(samples);
  for (double& v : d)
    v = (features.vector(pool[rng.below(pool.size())]) - features.vector(pool[rng.below(pool.size())])).squaredNorm();
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(samples / 2);
  std::nth_element(d.begin(), mid, d.end());
  return 0.5 * *mid;
}

void TrainConfig::validate() const {
  const bool balancing = strategy == Strategy::rkb || strategy == Strategy::wkb || strategy == Strategy::akb ||
                         strategy == Strategy::mb;
  if ((estimator == Estimator::kbips || estimator == Estimator::kbdr) && !balancing)
    throw ConfigError("estimator " + to_string(estimator) + " needs a kernel or moment balancing strategy");
  if ((estimator == Estimator::ips || estimator == Estimator::snips || estimator == Estimator::dr) &&
      strategy != Strategy::ce_propensity)
    throw ConfigError("estimator " + to_string(estimator) + " needs strategy ce_propensity");
  kernel.validate();
  if (J < 1) throw ConfigError("J must be at least 1");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (!(threshold >= 0.0)) throw ConfigError("threshold C must be non-negative");
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be non-negative");
  if (!(propensity_clip > 0.0 && propensity_clip <= 1.0)) throw ConfigError("propensity_clip must lie in (0, 1]");
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be at least 1");
  if (!(init_range >= 0.0)) throw ConfigError("init_range must be non-negative");
  if (imputation_batch < 1 || weight_batch < 1 || prediction_batch < 1 || kernel_batch < 1)
    throw ConfigError("batch sizes must be at least 1");
  if (imputation_steps < 0 || weight_steps < 0 || prediction_steps < 0)
    throw ConfigError("step counts must be non-negative");
  if (max_epochs < 1 || patience < 1) throw ConfigError("max_epochs and patience must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in (0, 1)");
  if (eval_k < 1) throw ConfigError("eval_k must be at least 1");
  for (const AdamOptions* o : {&prediction_opt, &imputation_opt, &weight_opt, &propensity_opt})
    if (!(o->learning_rate >= 0.0) || !(o->weight_decay >= 0.0))
      throw ConfigError("learning rates and weight decays must be non-negative");
}

void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  using Setter = std::function<void(const std::string&)>;
  auto real = [&](double& field) { return Setter([&field, key](const std::string& v) { field = to_double(key, v); }); };
  auto integer = [&](int& field) {
    return Setter([&field, key](const std::string& v) { field = static_cast<int>(to_integer(key, v)); });
  };
  const std::map<std::string, Setter> setters = {
      {"strategy", [&](const std::string& v) { c.strategy = parse_strategy(v); }},
      {"estimator", [&](const std::string& v) { c.estimator = parse_estimator(v); }},
      {"kernel", [&](const std::string& v) { c.kernel.family = parse_kernel_family(v); }},
      {"sigma_sq", real(c.kernel.sigma_sq)},
      {"bandwidth", [&](const std::string& v) { c.bandwidth = parse_bandwidth_mode(v); }},
      {"J", integer(c.J)},
      {"gamma", real(c.gamma)},
      {"threshold", real(c.threshold)},
      {"C", real(c.threshold)},
      {"ridge", real(c.ridge)},
      {"features", [&](const std::string& v) { c.features = parse_feature_source(v); }},
      {"akb_fit_scope", [&](const std::string& v) { c.akb_fit_scope = parse_akb_fit_scope(v); }},
      {"worst_case_form", [&](const std::string& v) { c.worst_case_form = parse_worst_case_form(v); }},
      {"error_form", [&](const std::string& v) { c.error_form = parse_error_form(v); }},
      {"propensity_clip", real(c.propensity_clip)},
      {"embedding_dim", integer(c.embedding_dim)},
      {"init_range", real(c.init_range)},
      {"imputation_batch", integer(c.imputation_batch)},
      {"weight_batch", integer(c.weight_batch)},
      {"prediction_batch", integer(c.prediction_batch)},
      {"kernel_batch", integer(c.kernel_batch)},
      {"imputation_steps", integer(c.imputation_steps)},
      {"weight_steps", integer(c.weight_steps)},
      {"prediction_steps", integer(c.prediction_steps)},
      {"max_epochs", integer(c.max_epochs)},
      {"patience", integer(c.patience)},
      {"validation_fraction", real(c.validation_fraction)},
      {"eval_k", integer(c.eval_k)},
      {"seed", [&](const std::string& v) { c.seed = static_cast<std::uint64_t>(to_integer("seed", v)); }},
      {"lr_prediction", real(c.prediction_opt.learning_rate)},
      {"wd_prediction", real(c.prediction_opt.weight_decay)},
      {"lr_imputation", real(c.imputation_opt.learning_rate)},
      {"wd_imputation", real(c.imputation_opt.weight_decay)},
      {"lr_weight", real(c.weight_opt.learning_rate)},
      {"wd_weight", real(c.weight_opt.weight_decay)},
      {"lr_propensity", real(c.propensity_opt.learning_rate)},
      {"wd_propensity", real(c.propensity_opt.weight_decay)},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key: " + key);
  it->second(value);
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), std::move(base));
}

std::string config_to_text(const TrainConfig& c) {
  std::map<std::string, std::string> kv = {
      {"strategy", to_string(c.strategy)},
      {"estimator", to_string(c.estimator)},
      {"kernel", to_string(c.kernel.family)},
      {"sigma_sq", num(c.kernel.sigma_sq)},
      {"bandwidth", to_string(c.bandwidth)},
      {"J", std::to_string(c.J)},
      {"gamma", num(c.gamma)},
      {"threshold", num(c.threshold)},
      {"ridge", num(c.ridge)},
      {"features", to_string(c.features)},
      {"akb_fit_scope", to_string(c.akb_fit_scope)},
      {"worst_case_form", to_string(c.worst_case_form)},
      {"error_form", c.error_form == ErrorForm::cross_entropy ? "cross_entropy" : "squared"},
      {"propensity_clip", num(c.propensity_clip)},
      {"embedding_dim", std::to_string(c.embedding_dim)},
      {"init_range", num(c.init_range)},
      {"imputation_batch", std::to_string(c.imputation_batch)},
      {"weight_batch", std::to_string(c.weight_batch)},
      {"prediction_batch", std::to_string(c.prediction_batch)},
      {"kernel_batch", std::to_string(c.kernel_batch)},
      {"imputation_steps", std::to_string(c.imputation_steps)},
      {"weight_steps", std::to_string(c.weight_steps)},
      {"prediction_steps", std::to_string(c.prediction_steps)},
      {"max_epochs", std::to_string(c.max_epochs)},
      {"patience", std::to_string(c.patience)},
      {"validation_fraction", num(c.validation_fraction)},
      {"eval_k", std::to_string(c.eval_k)},
      {"seed", std::to_string(c.seed)},
      {"lr_prediction", num(c.prediction_opt.learning_rate)},
      {"wd_prediction", num(c.prediction_opt.weight_decay)},
      {"lr_imputation", num(c.imputation_opt.learning_rate)},
      {"wd_imputation", num(c.imputation_opt.weight_decay)},
      {"lr_weight", num(c.weight_opt.learning_rate)},
      {"wd_weight", num(c.weight_opt.weight_decay)},
      {"lr_propensity", num(c.propensity_opt.learning_rate)},
      {"wd_propensity", num(c.propensity_opt.weight_decay)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string config_hash(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvaluationSplit make_evaluation_split(const Dataset& dataset, double validation_fraction, std::uint64_t seed) {
  EvaluationSplit split;
  if (!dataset.test) {
    split.validation = Mask::Zero(dataset.n_users, dataset.n_items);
    split.evaluation = split.validation;
    return split;
  }
  if (!dataset.has_full_ground_truth()) {
    split.validation = dataset.test->mask;
    split.evaluation = dataset.test->mask;
    return split;
  }
  // Own stream, so the split does not depend on how training consumes randomness.
  Rng rng(seed ^ 0x5eed5eed5eed5eedULL);
  split.validation = Mask::Zero(dataset.n_users, dataset.n_items);
  split.evaluation = Mask::Zero(dataset.n_users, dataset.n_items);
  for (int u = 0; u < dataset.n_users; ++u)
    for (int i = 0; i < dataset.n_items; ++i)
      (rng.uniform() < validation_fraction ? split.validation : split.evaluation)(u, i) = 1;
  return split;
}

Trainer::Trainer(const Dataset& dataset, TrainConfig config) : dataset_(dataset), config_(std::move(config)) {
  config_.validate();
  rng_ = Rng(config_.seed);
  const int nu = dataset_.n_users;
  const int ni = dataset_.n_items;
  const int d = config_.embedding_dim;
  bundle_.prediction = FactorizationModel::random(nu, ni, d, Link::sigmoid, rng_, config_.init_range);
  bundle_.imputation = FactorizationModel::random(nu, ni, d, Link::sigmoid, rng_, config_.init_range, kMaxError);
  // Start imputed errors at log 2, the error of an uninformed prediction.
  bundle_.imputation.params.global_bias = logit(std::log(2.0) / kMaxError);
  bundle_.weight = FactorizationModel::random(nu, ni, d, Link::exp, rng_, config_.init_range);
  if (config_.strategy == Strategy::ce_propensity) {
    bundle_.propensity = FactorizationModel::random(nu, ni, d, Link::sigmoid, rng_, config_.init_range);
    const double rate = std::clamp(static_cast<double>(dataset_.n_observed()) / static_cast<double>(dataset_.size()),
                                   1e-6, 1.0 - 1e-6);
    bundle_.propensity->params.global_bias = logit(rate);
  }
  initialize();
}

Trainer::Trainer(const Dataset& dataset, TrainConfig config, ModelBundle initial)
    : dataset_(dataset), config_(std::move(config)), bundle_(std::move(initial)) {
  config_.validate();
  rng_ = Rng(config_.seed);
  if (bundle_.prediction.n_users() != dataset_.n_users || bundle_.prediction.n_items() != dataset_.n_items)
    throw ShapeError("initial bundle does not match the dataset");
  if (config_.strategy == Strategy::ce_propensity && !bundle_.propensity)
    throw ConfigError("initial bundle lacks a propensity model");
  initialize();
}

void Trainer::initialize() {
  if (dataset_.n_observed() == 0) throw UnavailableError("dataset has no observed ratings");
  split_ = make_evaluation_split(dataset_, config_.validation_fraction, config_.seed);
  prediction_state_ = OptimizerState::for_model(bundle_.prediction, config_.prediction_opt);
  imputation_state_ = OptimizerState::for_model(bundle_.imputation, config_.imputation_opt);
  weight_state_ = OptimizerState::for_model(bundle_.weight, config_.weight_opt);
  if (bundle_.propensity) propensity_state_ = OptimizerState::for_model(*bundle_.propensity, config_.propensity_opt);
  all_pairs_ = dataset_.all_pairs();
  observed_pairs_ = dataset_.observed_pairs();
  features_ = build_features(dataset_, config_.features, &bundle_);
  effective_kernel_ = config_.kernel;
  renormalize_weights(all_pairs_);
  initialized_ = true;
}

bool Trainer::uses_imputation() const {
  return config_.estimator == Estimator::dr || config_.estimator == Estimator::kbdr;
}

bool Trainer::uses_weight_phase() const { return config_.strategy != Strategy::none; }

std::size_t Trainer::steps_for(int configured, std::size_t population, int batch) const {
  if (configured > 0) return static_cast<std::size_t>(configured);
  const auto b = static_cast<std::size_t>(batch);
  return std::max<std::size_t>(1, (population + b - 1) / b);
}

PairList Trainer::next_batch(DrawScope scope, std::size_t size) {
  const std::size_t population = scope == DrawScope::observed_only ? observed_pairs_.size() : all_pairs_.size();
  return sample_batch(dataset_, scope, std::min(size, population), rng_).pairs;
}

Vector Trainer::current_weights(std::span<const Pair> pairs, const Vector& mask) const {
  if (config_.estimator == Estimator::dr) {
    const Vector p = parallel::predict(*bundle_.propensity, pairs);
    Vector w(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) w(k) = mask(k) / std::max(p(k), config_.propensity_clip);
    return w;
  }
  return parallel::predict(bundle_.weight, pairs);
}

Vector Trainer::current_imputed(std::span<const Pair> pairs) const {
  return parallel::predict(bundle_.imputation, pairs);
}

void Trainer::renormalize_weights(std::span<const Pair> pairs) {
  const Vector mask = batch_mask(dataset_, pairs);
  const Vector raw = parallel::predict(bundle_.weight, pairs);
  const double observed_sum = mask.dot(raw);
  if (!(observed_sum > 0.0)) return;
  // Exp link: shifting the global bias rescales every weight.
  bundle_.weight.params.global_bias += std::log(static_cast<double>(pairs.size()) / observed_sum);
}

double Trainer::run_imputation_phase() {
  if (!uses_imputation()) return 0.0;
  const std::size_t steps = steps_for(config_.imputation_steps, observed_pairs_.size(), config_.imputation_batch);
  double total = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const PairList batch = next_batch(DrawScope::observed_only, static_cast<std::size_t>(config_.imputation_batch));
    const Vector mask = batch_mask(dataset_, batch);
    const Vector errors = batch_errors(bundle_.prediction, dataset_, batch, config_.error_form);
    const Vector weights = current_weights(batch, mask);
    const LossGradient g = imputation_loss_gradient(bundle_.imputation, batch, errors, mask, weights);
    if (!std::isfinite(g.value))
      throw NumericError("imputation loss is not finite at epoch " + std::to_string(epoch_ + 1));
    gradient_step(bundle_.imputation, imputation_state_, g.gradient);
    total += g.value;
  }
  return total / static_cast<double>(steps);
}

void Trainer::choose_functions() {
  const KernelSpec& spec = effective_kernel_;
  switch (config_.strategy) {
    case Strategy::mb:
      functions_ = choose_functions_mb(config_.J);
      return;
    case Strategy::rkb: {
      const PairList batch = next_batch(DrawScope::all_pairs, static_cast<std::size_t>(config_.kernel_batch));
      functions_ = choose_functions_rkb(batch, features_, spec, std::min<int>(config_.J, static_cast<int>(batch.size())), rng_);
      return;
    }
    case Strategy::akb: {
      AkbFitScope scope = config_.akb_fit_scope;
      if (scope == AkbFitScope::automatic) scope = uses_imputation() ? AkbFitScope::imputed : AkbFitScope::observed_only;
      const bool residual_target = config_.estimator == Estimator::kbdr;
      const PairList batch = next_batch(scope == AkbFitScope::observed_only ? DrawScope::observed_only : DrawScope::all_pairs,
                                        static_cast<std::size_t>(config_.kernel_batch));
      const Vector mask = batch_mask(dataset_, batch);
      const Vector errors = batch_errors(bundle_.prediction, dataset_, batch, config_.error_form);
      const Vector imputed = current_imputed(batch);
      Vector targets(errors.size());
      for (Eigen::Index k = 0; k < targets.size(); ++k) {
        if (mask(k) != 0.0)
          targets(k) = residual_target ? errors(k) - imputed(k) : errors(k);
        else
          targets(k) = residual_target ? 0.0 : imputed(k);  // imputed error stands in for the unknown one
      }
      const GramMatrix g = gram(spec, features_, batch);
      const int j = std::min<int>(config_.J, static_cast<int>(batch.size()));
      functions_ = choose_functions_akb(g, spec, j, targets, config_.ridge).functions;
      return;
    }
    default:
      functions_.reset();
  }
}

double Trainer::run_weight_phase() {
  if (!uses_weight_phase()) return 0.0;
  const std::size_t steps = steps_for(config_.weight_steps, all_pairs_.size(), config_.weight_batch);
  double total = 0.0;
  std::size_t counted = 0;

  if (config_.strategy == Strategy::ce_propensity) {
    for (std::size_t s = 0; s < steps; ++s) {
      const PairList batch = next_batch(DrawScope::all_pairs, static_cast<std::size_t>(config_.weight_batch));
      const Vector mask = batch_mask(dataset_, batch);
      const LossGradient g = propensity_loss_gradient(*bundle_.propensity, batch, mask);
      if (!std::isfinite(g.value))
        throw NumericError("propensity loss is not finite at epoch " + std::to_string(epoch_ + 1));
      gradient_step(*bundle_.propensity, *propensity_state_, g.gradient);
      total += g.value / static_cast<double>(batch.size());
      ++counted;
    }
    last_propensity_loss_ = total / static_cast<double>(std::max<std::size_t>(counted, 1));
    return *last_propensity_loss_;
  }

  features_ = build_features(dataset_, config_.features, &bundle_);
  effective_kernel_ = config_.kernel;
  if (config_.bandwidth == BandwidthMode::median_relative) {
    // Own stream per epoch so the main sequence of draws does not depend on the mode.
    Rng bandwidth_rng(config_.seed ^ (0xbadc0ffee0ddf00dULL + static_cast<std::uint64_t>(epoch_)));
    const double scale = median_heuristic(features_, all_pairs_, 1024, bandwidth_rng);
    if (scale > 0.0) effective_kernel_.sigma_sq = config_.kernel.sigma_sq * scale;
  }
  choose_functions();

  for (std::size_t s = 0; s < steps; ++s) {
    const PairList batch = next_batch(DrawScope::all_pairs, static_cast<std::size_t>(config_.weight_batch));
    const Vector mask = batch_mask(dataset_, batch);
    if (mask.sum() == 0.0) continue;
    LossGradient g;
    if (config_.strategy == Strategy::wkb) {
      const GramMatrix gm = gram(effective_kernel_, features_, batch);
      g = wkb_loss_gradient(bundle_.weight, batch, mask, gm, config_.gamma, config_.worst_case_form);
    } else {
      const Matrix h = functions_->evaluate(features_.rows(batch));
      g = balancing_loss_gradient(bundle_.weight, batch, mask, h, config_.gamma, config_.threshold).loss;
    }
    if (!std::isfinite(g.value))
      throw NumericError("balancing loss is not finite at epoch " + std::to_string(epoch_ + 1));
    gradient_step(bundle_.weight, weight_state_, g.gradient);
    renormalize_weights(batch);
    total += g.value;
    ++counted;
  }
  renormalize_weights(all_pairs_);

  if (functions_) {
    const Vector mask = batch_mask(dataset_, all_pairs_);
    const Vector w = parallel::predict(bundle_.weight, all_pairs_);
    last_balance_ = balancing_loss(w, mask, *functions_, features_.rows(all_pairs_), config_.gamma, config_.threshold);
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

double Trainer::run_prediction_phase() {
  const bool naive = config_.estimator == Estimator::naive;
  const DrawScope scope = naive ? DrawScope::observed_only : DrawScope::all_pairs;
  const std::size_t population = naive ? observed_pairs_.size() : all_pairs_.size();
  const std::size_t steps = steps_for(config_.prediction_steps, population, config_.prediction_batch);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    const PairList batch = next_batch(scope, static_cast<std::size_t>(config_.prediction_batch));
    const Vector mask = batch_mask(dataset_, batch);
    if (mask.sum() == 0.0 && config_.estimator != Estimator::ideal) continue;
    PredictionLossSpec spec;
    spec.estimator = config_.estimator;
    spec.form = config_.error_form;
    spec.propensity_clip = config_.propensity_clip;
    if (bundle_.propensity) spec.propensities = parallel::predict(*bundle_.propensity, batch);
    if (config_.estimator == Estimator::kbips || config_.estimator == Estimator::kbdr)
      spec.weights = parallel::predict(bundle_.weight, batch);
    if (uses_imputation()) spec.imputed = current_imputed(batch);
    const LossGradient g = prediction_loss_gradient(bundle_.prediction, dataset_, batch, spec);
    if (!std::isfinite(g.value))
      throw NumericError("prediction loss is not finite at epoch " + std::to_string(epoch_ + 1));
    gradient_step(bundle_.prediction, prediction_state_, g.gradient);
    total += g.value;
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

std::optional<double> Trainer::validation_auc() const {
  if (!dataset_.test || split_.validation.cast<int>().sum() == 0) return std::nullopt;
  const Matrix scores = parallel::predict_grid(bundle_.prediction);
  return evaluate_metrics(scores, *dataset_.test, config_.eval_k, &split_.validation).auc;
}

const EpochRecord& Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  EpochRecord record;
  record.epoch = epoch_ + 1;
  if (uses_imputation()) record.imputation_loss = run_imputation_phase();
  if (uses_weight_phase()) {
    const double loss = run_weight_phase();
    if (config_.strategy == Strategy::ce_propensity) {
      record.propensity_loss = loss;
    } else {
      record.weight_loss = loss;
      if (last_balance_ && functions_) {
        record.balance = last_balance_;
        record.max_abs_tau = last_balance_->max_abs_tau;
      }
      if (functions_) record.selected_centers = functions_->center_pairs;
    }
  }
  record.prediction_loss = run_prediction_phase();
  record.validation_auc = validation_auc();
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ++epoch_;
  trace_.epochs.push_back(std::move(record));
  return trace_.epochs.back();
}

TrainResult Trainer::run() {
  ModelBundle best = bundle_;
  trace_.best_epoch = 0;
  trace_.best_validation_auc = -1.0;
  while (epoch_ < config_.max_epochs) {
    const EpochRecord& rec = run_epoch();
    const double auc_value = rec.validation_auc.value_or(0.0);
    if (!rec.validation_auc || auc_value > trace_.best_validation_auc) {
      trace_.best_validation_auc = auc_value;
      trace_.best_epoch = rec.epoch;
      best = bundle_;
    } else if (rec.epoch - trace_.best_epoch >= config_.patience) {
      break;
    }
  }
  TrainResult result;
  result.bundle = std::move(best);
  result.trace = trace_;
  if (dataset_.test && split_.evaluation.cast<int>().sum() > 0)
    result.metrics = validate(result.bundle, dataset_, config_.eval_k, &split_.evaluation);
  return result;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config) {
  Trainer trainer(dataset, config);
  return trainer.run();
}

MetricReport validate(const ModelBundle& bundle, const Dataset& dataset, int k, const Mask* subset) {
  if (!dataset.test) throw UnavailableError("validation needs a test grid");
  const Matrix scores = parallel::predict_grid(bundle.prediction);
  return evaluate_metrics(scores, *dataset.test, k, subset);
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "J") return SweepAxis::J;
  if (name == "gamma") return SweepAxis::gamma;
  if (name == "sigma_sq") return SweepAxis::sigma_sq;
  if (name == "C" || name == "threshold") return SweepAxis::C;
  throw ConfigError("unknown sweep axis: " + name);
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::J: return "J";
    case SweepAxis::gamma: return "gamma";
    case SweepAxis::sigma_sq: return "sigma_sq";
    case SweepAxis::C: return "C";
  }
  return "?";
}

std::vector<SweepPoint> sweep(const Dataset& dataset, const TrainConfig& base, SweepAxis axis,
                              const std::vector<double>& values) {
  std::vector<TrainConfig> configs;
  for (double v : values) {
    TrainConfig c = base;
    switch (axis) {
      case SweepAxis::J:
        if (v < 1.0 || v != std::floor(v)) throw ConfigError("J sweep values must be positive integers");
        c.J = static_cast<int>(v);
        break;
      case SweepAxis::gamma: c.gamma = v; break;
      case SweepAxis::sigma_sq: c.kernel.sigma_sq = v; break;
      case SweepAxis::C: c.threshold = v; break;
    }
    c.validate();
    configs.push_back(c);
  }
  std::vector<SweepPoint> points(values.size());
  std::vector<std::exception_ptr> failures(values.size());
  // Runs are independent and individually deterministic, so the schedule
  // cannot change any result.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(values.size()); ++k) {
    const auto idx = static_cast<std::size_t>(k);
    try {
      TrainResult r = train(dataset, configs[idx]);
      points[idx].value = values[idx];
      if (!r.metrics) throw UnavailableError("sweep needs a test grid");
      points[idx].metrics = *r.metrics;
      points[idx].best_validation_auc = r.trace.best_validation_auc;
      points[idx].trace = std::move(r.trace);
    } catch (...) {
      failures[idx] = std::current_exception();
    }
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);
  return points;
}

}  // namespace kbcf
