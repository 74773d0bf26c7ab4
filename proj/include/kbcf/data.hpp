#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "kbcf/rng.hpp"
#include "kbcf/types.hpp"

namespace kbcf {

struct ModelBundle;

// Outcome grid with its own observation mask; used for the unbiased test set.
struct OutcomeGrid {
  Matrix outcomes;
  Mask mask;

  std::size_t count() const;
};

// Full user-item grid D. Only cells with mask = 1 carry an outcome; the
// outcome value of an unobserved cell is stored as 0 and must not be read.
struct Dataset {
  int n_users = 0;
  int n_items = 0;
  Matrix ratings;
  Mask mask;
  std::optional<Matrix> true_propensities;
  std::optional<OutcomeGrid> test;

  std::size_t size() const { return static_cast<std::size_t>(n_users) * n_items; }
  std::size_t n_observed() const;
  bool observed(Pair p) const { return mask(p.user, p.item) != 0; }
  double rating(Pair p) const { return ratings(p.user, p.item); }

  Pair pair_at(std::size_t flat) const {
    return {static_cast<int>(flat / n_items), static_cast<int>(flat % n_items)};
  }
  std::size_t flat_index(Pair p) const { return static_cast<std::size_t>(p.user) * n_items + p.item; }

  // Every cell of D, row-major.
  PairList all_pairs() const;
  // Observed cells, row-major.
  PairList observed_pairs() const;

  // True when every test cell is observed, i.e. the test grid is the full ground truth.
  bool has_full_ground_truth() const;

  // Checks the documented invariants; throws FormatError on violation.
  void validate() const;
};

struct LoadOptions {
  double threshold = 3.0;   // ratings below become 0, at or above become 1
  double scale_max = 5.0;   // largest legal rating value
};

// Reads a whitespace-separated rating matrix (one user per row, 0 = unobserved).
Dataset load_matrix_dataset(const std::filesystem::path& train_path,
                            const std::optional<std::filesystem::path>& test_path,
                            const LoadOptions& options = {});

// Attaches a propensity sidecar (same shape as the rating matrix).
void load_propensities(Dataset& dataset, const std::filesystem::path& path);

struct SyntheticSpec {
  int n_users = 100;
  int n_items = 100;
  int latent_dim = 4;
  double propensity_lo = 0.05;
  double propensity_hi = 0.9;
  std::uint64_t seed = 0;
};

// Logistic low-rank outcomes with MNAR observation: propensities are a logistic
// function of the same latents (clipped to the given range), so positive
// outcomes are more likely to be observed. The full outcome grid is stored as
// the test grid.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Same observation process as generate_synthetic, redrawn from the stored
// propensities with a fresh stream. Outcomes and propensities are unchanged.
Dataset redraw_observations(const Dataset& dataset, Rng& rng);

// Writes train.ascii, test.ascii (when present) and propensities.txt (when present).
// Positive outcomes are written as 5 and negative ones as 1, so the default
// LoadOptions read the files back to the identical grid.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
void write_matrix_file(const Matrix& outcomes, const Mask& mask, const std::filesystem::path& path);

// Inverse of save_dataset.
Dataset load_dataset_dir(const std::filesystem::path& dir);

enum class FeatureSource { one_hot_concat, embedding_concat };

FeatureSource parse_feature_source(const std::string& name);
std::string to_string(FeatureSource source);

// Maps a pair to its feature vector x_{u,i}. Embedding features are copied
// from the model at construction and never follow later model updates.
class FeatureMap {
 public:
  static FeatureMap one_hot(int n_users, int n_items);
  static FeatureMap embeddings(const Matrix& user_embeddings, const Matrix& item_embeddings);

  FeatureSource source() const { return source_; }
  int dim() const { return dim_; }

  Vector vector(Pair p) const;
  // One row per pair.
  Matrix rows(std::span<const Pair> pairs) const;

 private:
  FeatureSource source_ = FeatureSource::one_hot_concat;
  int dim_ = 0;
  int n_users_ = 0;
  int n_items_ = 0;
  Matrix user_part_;
  Matrix item_part_;
};

FeatureMap build_features(const Dataset& dataset, FeatureSource source,
                          const ModelBundle* bundle = nullptr);

enum class DrawScope { all_pairs, observed_only };

struct Batch {
  PairList pairs;
  DrawScope scope = DrawScope::all_pairs;
};

// Uniform sample without replacement from D or O.
Batch sample_batch(const Dataset& dataset, DrawScope scope, std::size_t size, Rng& rng);

// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::span<T> values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace kbcf
