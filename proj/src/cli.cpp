#include "kbcf/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kbcf/bias_bench.hpp"
#include "kbcf/error.hpp"
#include "kbcf/io.hpp"
#include "kbcf/objectives.hpp"
#include "kbcf/parallel.hpp"
#include "kbcf/training.hpp"

namespace kbcf {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  std::string out_dir = ".";
  bool diagnostics = false;
};

struct DataOptions {
  std::string data_dir;
  std::string train;
  std::string test;
  std::string propensities;
  double threshold = 3.0;

  void add_to(CLI::App* app) {
    app->add_option("--data-dir", data_dir, "Directory written by `simulate` (train.ascii, test.ascii, propensities.txt)");
    app->add_option("--train", train, "Rating matrix of the biased training set (0 = unobserved)");
    app->add_option("--test", test, "Rating matrix of the unbiased test set");
    app->add_option("--propensities", propensities, "Propensity matrix with the training shape");
    app->add_option("--rating-threshold", threshold, "Ratings at or above become positive");
  }

  Dataset load() const {
    if (!data_dir.empty() && !train.empty()) throw ConfigError("give either --data-dir or --train, not both");
    if (!data_dir.empty()) return load_dataset_dir(data_dir);
    if (train.empty()) throw ConfigError("a dataset is required: --data-dir or --train");
    LoadOptions options;
    options.threshold = threshold;
    Dataset ds = load_matrix_dataset(train, test.empty() ? std::nullopt : std::optional<fs::path>(test), options);
    if (!propensities.empty()) load_propensities(ds, propensities);
    return ds;
  }
};

struct ConfigOverrides {
  std::string strategy, estimator, kernel, bandwidth;
  std::optional<double> sigma_sq, gamma, threshold;
  std::optional<int> J, max_epochs;
  std::vector<std::string> settings;

  void add_to(CLI::App* app) {
    app->add_option("--strategy", strategy, "none|ce_propensity|rkb|wkb|akb|mb");
    app->add_option("--estimator", estimator, "naive|ips|snips|dr|kbips|kbdr");
    app->add_option("--kernel", kernel, "gaussian|exponential");
    app->add_option("--sigma-sq", sigma_sq, "Kernel bandwidth sigma^2 (a multiplier of the median heuristic unless --bandwidth absolute)");
    app->add_option("--bandwidth", bandwidth, "median_relative|absolute");
    app->add_option("--J", J, "Number of balancing functions");
    app->add_option("--gamma", gamma, "Balancing penalty weight");
    app->add_option("--C", threshold, "Balancing residual tolerance");
    app->add_option("--max-epochs", max_epochs, "Upper bound on outer iterations");
    app->add_option("--set", settings, "Any config key as key=value (repeatable)");
  }

  TrainConfig resolve(const GlobalOptions& g) const {
    TrainConfig c;
    if (!g.config.empty()) c = load_config(g.config, c);
    if (g.seed_given) c.seed = g.seed;
    if (!strategy.empty()) c.strategy = parse_strategy(strategy);
    if (!estimator.empty()) c.estimator = parse_estimator(estimator);
    if (!kernel.empty()) c.kernel.family = parse_kernel_family(kernel);
    if (sigma_sq) c.kernel.sigma_sq = *sigma_sq;
    if (!bandwidth.empty()) c.bandwidth = parse_bandwidth_mode(bandwidth);
    if (gamma) c.gamma = *gamma;
    if (threshold) c.threshold = *threshold;
    if (J) c.J = *J;
    if (max_epochs) c.max_epochs = *max_epochs;
    for (const auto& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + s);
      apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
    }
    c.validate();
    return c;
  }
};

// Loss reports of the trained bundle over all of D, with bias against the
// full outcome grid when the dataset has one.
std::string estimator_lines(const Trainer& trainer, const ModelBundle& bundle, const Dataset& ds, int epoch) {
  const TrainConfig& c = trainer.config();
  const PairList pairs = ds.all_pairs();
  EstimatorInputs in;
  in.errors = batch_errors(bundle.prediction, ds, pairs, c.error_form);
  in.mask = batch_mask(ds, pairs);
  in.propensity_clip = c.propensity_clip;
  if (ds.has_full_ground_truth()) in.full_errors = batch_true_errors(bundle.prediction, ds, pairs, c.error_form);
  if (bundle.propensity) in.propensities = parallel::predict(*bundle.propensity, pairs);
  in.weights = parallel::predict(bundle.weight, pairs);
  in.imputed = parallel::predict(bundle.imputation, pairs);

  std::vector<Estimator> names = {Estimator::naive};
  if (c.estimator != Estimator::naive) names.push_back(c.estimator);
  if (in.full_errors) names.insert(names.begin(), Estimator::ideal);
  std::string out;
  for (Estimator e : names) {
    EstimatorReport r = evaluate_estimator(e, in);
    if ((e == Estimator::kbips || e == Estimator::kbdr) && trainer.last_balance())
      r.max_abs_tau = trainer.last_balance()->max_abs_tau;
    out += estimator_report_json(r, epoch, c.seed) + "\n";
  }
  return out;
}

void run_simulate(const GlobalOptions& g, SyntheticSpec spec, std::ostream& out) {
  spec.seed = g.seed;
  const Dataset ds = generate_synthetic(spec);
  save_dataset(ds, g.out_dir);
  out << "wrote " << ds.n_users << "x" << ds.n_items << " dataset with " << ds.n_observed() << " observed ratings to "
      << g.out_dir << "\n";
}

void run_train(const GlobalOptions& g, const DataOptions& data, const ConfigOverrides& overrides, std::ostream& out) {
  const Dataset ds = data.load();
  const TrainConfig config = overrides.resolve(g);
  Trainer trainer(ds, config);
  const TrainResult result = trainer.run();
  const fs::path dir = g.out_dir;
  fs::create_directories(dir);
  save_checkpoint(Checkpoint{result.bundle, config_hash(config)}, dir / "checkpoint.txt");
  write_text_file(dir / "config.txt", config_to_text(config));
  write_text_file(dir / "trace.csv", trace_csv(result.trace));
  write_text_file(dir / "estimators.jsonl", estimator_lines(trainer, result.bundle, ds, result.trace.best_epoch));
  if (result.metrics) {
    const std::string json = metric_report_json(*result.metrics, config.seed);
    write_text_file(dir / "metrics.json", json + "\n");
    out << json << "\n";
  }
  if (g.diagnostics) {
    write_text_file(dir / "diagnostics.csv", diagnostics_csv(result.trace, config));
    const auto& fns = trainer.last_functions();
    if (fns && fns->kind == BalancingFunctionSet::Kind::kernel_centers && !fns->center_pairs.empty())
      dump_gram_csv(gram(fns->spec, trainer.last_features(), fns->center_pairs), dir / "gram.csv");
  }
}

void run_evaluate(const GlobalOptions& g, const DataOptions& data, const std::string& checkpoint, int k,
                  std::ostream& out) {
  const Dataset ds = data.load();
  const Checkpoint cp = load_checkpoint(checkpoint);
  if (cp.bundle.prediction.n_users() != ds.n_users || cp.bundle.prediction.n_items() != ds.n_items)
    throw ShapeError("checkpoint does not match the dataset shape");
  const MetricReport report = validate(cp.bundle, ds, k);
  const std::string json = metric_report_json(report, g.seed);
  write_text_file(fs::path(g.out_dir) / "metrics.json", json + "\n");
  out << json << "\n";
}

void run_sweep(const GlobalOptions& g, const DataOptions& data, const ConfigOverrides& overrides,
               const std::string& axis, const std::vector<double>& values, std::ostream& out) {
  const Dataset ds = data.load();
  const TrainConfig config = overrides.resolve(g);
  const std::vector<SweepPoint> points = sweep(ds, config, parse_sweep_axis(axis), values);
  const std::string csv = sweep_csv(points, config.seed);
  write_text_file(fs::path(g.out_dir) / "sweep.csv", csv);
  out << csv;
}

void run_bias_bench(const GlobalOptions& g, BiasBenchSpec spec, std::ostream& out) {
  spec.data.seed = g.seed;
  const std::string json = bias_bench_json(run_bias_bench(spec));
  write_text_file(fs::path(g.out_dir) / "bias_bench.json", json);
  out << json;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kernel balancing for debiased collaborative filtering"};
  app.require_subcommand(1);
  GlobalOptions g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--config", g.config, "Config file of key = value lines");
  app.add_option("--out-dir", g.out_dir, "Directory for every output file")->capture_default_str();
  app.add_flag("--diagnostics", g.diagnostics, "Also write balancing diagnostics and a Gram dump");
  // Global flags are accepted after the subcommand as well.
  app.fallthrough();

  SyntheticSpec sim;
  auto* simulate = app.add_subcommand("simulate", "Generate and write a synthetic MNAR dataset");
  simulate->add_option("--users", sim.n_users)->capture_default_str();
  simulate->add_option("--items", sim.n_items)->capture_default_str();
  simulate->add_option("--latent-dim", sim.latent_dim)->capture_default_str();
  simulate->add_option("--propensity-lo", sim.propensity_lo)->capture_default_str();
  simulate->add_option("--propensity-hi", sim.propensity_hi)->capture_default_str();

  DataOptions train_data, eval_data, sweep_data;
  ConfigOverrides train_overrides, sweep_overrides;
  auto* train_cmd = app.add_subcommand("train", "Train a model bundle; writes checkpoint, trace and metrics");
  train_data.add_to(train_cmd);
  train_overrides.add_to(train_cmd);

  std::string checkpoint;
  int eval_k = 5;
  auto* evaluate = app.add_subcommand("evaluate", "Metrics of a checkpoint on the dataset's test grid");
  eval_data.add_to(evaluate);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint written by `train`")->required();
  evaluate->add_option("--k", eval_k, "Cutoff for NDCG@k and F1@k")->capture_default_str();

  std::string axis;
  std::vector<double> values;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train once per value of one hyperparameter");
  sweep_data.add_to(sweep_cmd);
  sweep_overrides.add_to(sweep_cmd);
  sweep_cmd->add_option("--axis", axis, "J|gamma|sigma_sq|C")->required();
  sweep_cmd->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');

  BiasBenchSpec bench;
  auto* bias = app.add_subcommand("bias-bench", "Monte-Carlo estimator bias table on synthetic data");
  bias->add_option("--resamples", bench.resamples)->capture_default_str();
  bias->add_option("--users", bench.data.n_users)->capture_default_str();
  bias->add_option("--items", bench.data.n_items)->capture_default_str();
  bias->add_option("--centers", bench.exact_centers, "Kernel centers of the exact-balancing row")->capture_default_str();
  bias->add_option("--sigma-sq", bench.kernel.sigma_sq)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*simulate) run_simulate(g, sim, out);
    else if (*train_cmd) run_train(g, train_data, train_overrides, out);
    else if (*evaluate) run_evaluate(g, eval_data, checkpoint, eval_k, out);
    else if (*sweep_cmd) run_sweep(g, sweep_data, sweep_overrides, axis, values, out);
    else if (*bias) run_bias_bench(g, bench, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace kbcf
