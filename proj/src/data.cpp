#include "kbcf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "kbcf/error.hpp"
#include "kbcf/model.hpp"

namespace kbcf {

namespace {

std::vector<std::vector<double>> read_numeric_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<double> row;
    std::string token;
    while (fields >> token) {
      char* end = nullptr;
      const double value = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0' || !std::isfinite(value)) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not a number: " + token);
      }
      row.push_back(value);
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ragged row (" +
                        std::to_string(row.size()) + " columns, expected " +
                        std::to_string(rows.front().size()) + ")");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": empty matrix file");
  return rows;
}

OutcomeGrid binarize(const std::vector<std::vector<double>>& rows, const LoadOptions& options,
                     const std::filesystem::path& path) {
  const auto n_rows = static_cast<Eigen::Index>(rows.size());
  const auto n_cols = static_cast<Eigen::Index>(rows.front().size());
  OutcomeGrid grid{Matrix::Zero(n_rows, n_cols), Mask::Zero(n_rows, n_cols)};
  for (Eigen::Index u = 0; u < n_rows; ++u) {
    for (Eigen::Index i = 0; i < n_cols; ++i) {
      const double value = rows[u][i];
      if (value == 0.0) continue;
      if (value < 0.0 || value > options.scale_max) {
        throw FormatError(path.string() + ": rating " + std::to_string(value) + " outside (0, " +
                          std::to_string(options.scale_max) + "]");
      }
      grid.mask(u, i) = 1;
      grid.outcomes(u, i) = value < options.threshold ? 0.0 : 1.0;
    }
  }
  return grid;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

std::size_t OutcomeGrid::count() const { return static_cast<std::size_t>(mask.cast<int>().sum()); }

std::size_t Dataset::n_observed() const { return static_cast<std::size_t>(mask.cast<int>().sum()); }

PairList Dataset::all_pairs() const {
  PairList pairs;
  pairs.reserve(size());
  for (int u = 0; u < n_users; ++u)
    for (int i = 0; i < n_items; ++i) pairs.push_back({u, i});
  return pairs;
}

PairList Dataset::observed_pairs() const {
  PairList pairs;
  pairs.reserve(n_observed());
  for (int u = 0; u < n_users; ++u)
    for (int i = 0; i < n_items; ++i)
      if (mask(u, i)) pairs.push_back({u, i});
  return pairs;
}

bool Dataset::has_full_ground_truth() const {
  return test && test->mask.rows() == n_users && test->mask.cols() == n_items &&
         test->count() == size();
}

void Dataset::validate() const {
  if (n_users < 1 || n_items < 1) throw FormatError("dataset must have at least one user and item");
  if (ratings.rows() != n_users || ratings.cols() != n_items || mask.rows() != n_users ||
      mask.cols() != n_items) {
    throw FormatError("rating grid and mask must be n_users x n_items");
  }
  for (int u = 0; u < n_users; ++u) {
    for (int i = 0; i < n_items; ++i) {
      if (mask(u, i) && ratings(u, i) != 0.0 && ratings(u, i) != 1.0)
        throw FormatError("observed rating is not binary");
    }
  }
  if (true_propensities) {
    const Matrix& p = *true_propensities;
    if (p.rows() != n_users || p.cols() != n_items) throw FormatError("propensity grid shape mismatch");
    if (!(p.array() > 0.0).all() || !(p.array() <= 1.0).all())
      throw FormatError("propensities must lie in (0, 1]");
  }
  if (test && (test->outcomes.rows() != n_users || test->outcomes.cols() != n_items))
    throw FormatError("test grid shape mismatch");
}

Dataset load_matrix_dataset(const std::filesystem::path& train_path,
                            const std::optional<std::filesystem::path>& test_path,
                            const LoadOptions& options) {
  if (!(options.threshold > 0.0) || options.threshold > options.scale_max) {
    throw ConfigError("binarize threshold " + std::to_string(options.threshold) +
                      " outside the rating scale (0, " + std::to_string(options.scale_max) + "]");
  }
  OutcomeGrid train = binarize(read_numeric_rows(train_path), options, train_path);
  Dataset dataset;
  dataset.n_users = static_cast<int>(train.outcomes.rows());
  dataset.n_items = static_cast<int>(train.outcomes.cols());
  dataset.ratings = std::move(train.outcomes);
  dataset.mask = std::move(train.mask);
  if (test_path) {
    OutcomeGrid test = binarize(read_numeric_rows(*test_path), options, *test_path);
    if (test.outcomes.rows() != dataset.n_users || test.outcomes.cols() != dataset.n_items) {
      throw FormatError("test matrix shape differs from train matrix");
    }
    dataset.test = std::move(test);
  }
  return dataset;
}

void load_propensities(Dataset& dataset, const std::filesystem::path& path) {
  const auto rows = read_numeric_rows(path);
  if (static_cast<int>(rows.size()) != dataset.n_users ||
      static_cast<int>(rows.front().size()) != dataset.n_items) {
    throw FormatError(path.string() + ": propensity grid shape differs from rating matrix");
  }
  Matrix p(dataset.n_users, dataset.n_items);
  for (int u = 0; u < dataset.n_users; ++u)
    for (int i = 0; i < dataset.n_items; ++i) {
      const double value = rows[u][i];
      if (!(value > 0.0 && value <= 1.0)) throw FormatError(path.string() + ": propensity outside (0, 1]");
      p(u, i) = value;
    }
  dataset.true_propensities = std::move(p);
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_users < 1 || spec.n_items < 1 || spec.latent_dim < 1)
    throw ConfigError("synthetic dimensions must be at least 1");
  if (!(spec.propensity_lo > 0.0))
    throw ConfigError("propensity lower bound must be positive");
  if (spec.propensity_lo > spec.propensity_hi || spec.propensity_hi > 1.0)
    throw ConfigError("propensity range must satisfy 0 < lo <= hi <= 1");

  Rng rng(spec.seed);
  const int d = spec.latent_dim;
  const double factor_sd = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix user_latent(spec.n_users, d);
  Matrix item_latent(spec.n_items, d);
  for (int u = 0; u < spec.n_users; ++u)
    for (int k = 0; k < d; ++k) user_latent(u, k) = rng.normal() * factor_sd;
  for (int i = 0; i < spec.n_items; ++i)
    for (int k = 0; k < d; ++k) item_latent(i, k) = rng.normal() * factor_sd;
  Vector user_activity(spec.n_users);
  Vector item_popularity(spec.n_items);
  for (int u = 0; u < spec.n_users; ++u) user_activity(u) = 0.5 * rng.normal();
  for (int i = 0; i < spec.n_items; ++i) item_popularity(i) = 0.5 * rng.normal();

  Dataset dataset;
  dataset.n_users = spec.n_users;
  dataset.n_items = spec.n_items;
  dataset.ratings = Matrix::Zero(spec.n_users, spec.n_items);
  dataset.mask = Mask::Zero(spec.n_users, spec.n_items);
  Matrix outcomes(spec.n_users, spec.n_items);
  Matrix propensities(spec.n_users, spec.n_items);

  for (int u = 0; u < spec.n_users; ++u) {
    for (int i = 0; i < spec.n_items; ++i) {
      const double affinity = 2.0 * user_latent.row(u).dot(item_latent.row(i));
      const double outcome_logit = affinity + 0.5 * item_popularity(i);
      outcomes(u, i) = rng.bernoulli(logistic(outcome_logit)) ? 1.0 : 0.0;
      // Users see what they like and what is popular.
      const double exposure_logit = -1.5 + 1.5 * affinity + user_activity(u) + item_popularity(i);
      propensities(u, i) = std::clamp(logistic(exposure_logit), spec.propensity_lo, spec.propensity_hi);
    }
  }
  for (int u = 0; u < spec.n_users; ++u) {
    for (int i = 0; i < spec.n_items; ++i) {
      if (rng.bernoulli(propensities(u, i))) {
        dataset.mask(u, i) = 1;
        dataset.ratings(u, i) = outcomes(u, i);
      }
    }
  }
  dataset.true_propensities = std::move(propensities);
  dataset.test = OutcomeGrid{std::move(outcomes), Mask::Ones(spec.n_users, spec.n_items)};
  return dataset;
}

Dataset redraw_observations(const Dataset& dataset, Rng& rng) {
  if (!dataset.true_propensities || !dataset.has_full_ground_truth())
    throw UnavailableError("redrawing observations needs true propensities and a full outcome grid");
  Dataset out = dataset;
  out.ratings.setZero();
  out.mask.setZero();
  const Matrix& p = *dataset.true_propensities;
  for (int u = 0; u < dataset.n_users; ++u) {
    for (int i = 0; i < dataset.n_items; ++i) {
      if (rng.bernoulli(p(u, i))) {
        out.mask(u, i) = 1;
        out.ratings(u, i) = dataset.test->outcomes(u, i);
      }
    }
  }
  return out;
}

void write_matrix_file(const Matrix& outcomes, const Mask& mask, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (Eigen::Index u = 0; u < outcomes.rows(); ++u) {
    for (Eigen::Index i = 0; i < outcomes.cols(); ++i) {
      if (i) out << ' ';
      out << (mask(u, i) ? (outcomes(u, i) > 0.5 ? 5 : 1) : 0);
    }
    out << '\n';
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_matrix_file(dataset.ratings, dataset.mask, dir / "train.ascii");
  if (dataset.test) write_matrix_file(dataset.test->outcomes, dataset.test->mask, dir / "test.ascii");
  if (dataset.true_propensities) {
    std::ofstream out(dir / "propensities.txt");
    if (!out) throw FormatError("cannot write propensities.txt");
    out << std::setprecision(17);
    const Matrix& p = *dataset.true_propensities;
    for (Eigen::Index u = 0; u < p.rows(); ++u) {
      for (Eigen::Index i = 0; i < p.cols(); ++i) {
        if (i) out << ' ';
        out << p(u, i);
      }
      out << '\n';
    }
  }
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  const auto test = dir / "test.ascii";
  Dataset dataset = load_matrix_dataset(
      dir / "train.ascii", std::filesystem::exists(test) ? std::optional(test) : std::nullopt);
  const auto propensities = dir / "propensities.txt";
  if (std::filesystem::exists(propensities)) load_propensities(dataset, propensities);
  return dataset;
}

FeatureSource parse_feature_source(const std::string& name) {
  if (name == "one_hot_concat" || name == "one_hot") return FeatureSource::one_hot_concat;
  if (name == "embedding_concat" || name == "embedding") return FeatureSource::embedding_concat;
  throw ConfigError("unknown feature source: " + name);
}

std::string to_string(FeatureSource source) {
  return source == FeatureSource::one_hot_concat ? "one_hot_concat" : "embedding_concat";
}

FeatureMap FeatureMap::one_hot(int n_users, int n_items) {
  FeatureMap map;
  map.source_ = FeatureSource::one_hot_concat;
  map.n_users_ = n_users;
  map.n_items_ = n_items;
  map.dim_ = n_users + n_items;
  return map;
}

FeatureMap FeatureMap::embeddings(const Matrix& user_embeddings, const Matrix& item_embeddings) {
  if (user_embeddings.cols() != item_embeddings.cols())
    throw ShapeError("user and item embeddings differ in dimension");
  FeatureMap map;
  map.source_ = FeatureSource::embedding_concat;
  map.n_users_ = static_cast<int>(user_embeddings.rows());
  map.n_items_ = static_cast<int>(item_embeddings.rows());
  map.dim_ = static_cast<int>(2 * user_embeddings.cols());
  map.user_part_ = user_embeddings;
  map.item_part_ = item_embeddings;
  return map;
}

Vector FeatureMap::vector(Pair p) const {
  if (p.user < 0 || p.user >= n_users_ || p.item < 0 || p.item >= n_items_)
    throw RequestError("pair out of range");
  if (source_ == FeatureSource::one_hot_concat) {
    Vector x = Vector::Zero(dim_);
    x(p.user) = 1.0;
    x(n_users_ + p.item) = 1.0;
    return x;
  }
  const auto half = user_part_.cols();
  Vector x(dim_);
  x.head(half) = user_part_.row(p.user).transpose();
  x.tail(half) = item_part_.row(p.item).transpose();
  return x;
}

Matrix FeatureMap::rows(std::span<const Pair> pairs) const {
  Matrix out(static_cast<Eigen::Index>(pairs.size()), dim_);
  for (std::size_t r = 0; r < pairs.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = vector(pairs[r]).transpose();
  return out;
}

FeatureMap build_features(const Dataset& dataset, FeatureSource source, const ModelBundle* bundle) {
  if (source == FeatureSource::one_hot_concat) return FeatureMap::one_hot(dataset.n_users, dataset.n_items);
  if (!bundle) throw ConfigError("embedding_concat features need a prediction model");
  const auto& params = bundle->prediction.params;
  if (params.user_factors.rows() != dataset.n_users || params.item_factors.rows() != dataset.n_items)
    throw ShapeError("prediction model does not match dataset shape");
  return FeatureMap::embeddings(params.user_factors, params.item_factors);
}

Batch sample_batch(const Dataset& dataset, DrawScope scope, std::size_t size, Rng& rng) {
  Batch batch;
  batch.scope = scope;
  if (scope == DrawScope::observed_only) {
    PairList population = dataset.observed_pairs();
    if (size > population.size())
      throw RequestError("batch size " + std::to_string(size) + " exceeds |O| = " + std::to_string(population.size()));
    // Partial Fisher-Yates: the first `size` slots become the sample.
    for (std::size_t k = 0; k < size; ++k) {
      const std::size_t j = k + rng.below(population.size() - k);
      std::swap(population[k], population[j]);
    }
    population.resize(size);
    batch.pairs = std::move(population);
    return batch;
  }
  const std::size_t n = dataset.size();
  if (size > n) throw RequestError("batch size " + std::to_string(size) + " exceeds |D| = " + std::to_string(n));
  // Floyd's algorithm keeps the cost proportional to the batch size.
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(size * 2);
  std::vector<std::size_t> order;
  order.reserve(size);
  for (std::size_t j = n - size; j < n; ++j) {
    const std::size_t t = rng.below(j + 1);
    const std::size_t pick = chosen.insert(t).second ? t : j;
    if (pick == j) chosen.insert(j);
    order.push_back(pick);
  }
  batch.pairs.reserve(size);
  for (std::size_t flat : order) batch.pairs.push_back(dataset.pair_at(flat));
  return batch;
}

}  // namespace kbcf
