#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "kbcf/rng.hpp"
#include "kbcf/types.hpp"

namespace kbcf {

enum class Link { sigmoid, exp, identity };

std::string to_string(Link link);

// Trainable tensors of a factorization model. Gradients and Adam moments use
// the same type.
struct Parameters {
  Matrix user_factors;  // n_users x d
  Matrix item_factors;  // n_items x d
  Vector user_bias;
  Vector item_bias;
  double global_bias = 0.0;

  static Parameters zeros(int n_users, int n_items, int dim);
  Parameters zeros_like() const;

  std::size_t count() const;
  bool same_shape(const Parameters& other) const;
  // Name of the first group holding a NaN or Inf, empty if all finite.
  std::string first_non_finite_group() const;
  // Order-dependent hash of the raw bits; used to assert which model a phase touched.
  std::uint64_t checksum() const;

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

// link(<p_u, q_i> + b_u + b_i + b), multiplied by `scale`.
struct FactorizationModel {
  Parameters params;
  Link link = Link::sigmoid;
  double scale = 1.0;

  static FactorizationModel zeros(int n_users, int n_items, int dim, Link link, double scale = 1.0);
  // Factors ~ U(-init_range, init_range), biases zero.
  static FactorizationModel random(int n_users, int n_items, int dim, Link link, Rng& rng,
                                   double init_range = 0.01, double scale = 1.0);

  int n_users() const { return static_cast<int>(params.user_factors.rows()); }
  int n_items() const { return static_cast<int>(params.item_factors.rows()); }
  int dim() const { return static_cast<int>(params.user_factors.cols()); }

  double score(Pair p) const;
  double forward(Pair p) const;
  // d forward / d score at the given pair.
  double output_derivative(Pair p) const;

  // Adds d_output * d forward(p) / d params into grad.
  void backward(Pair p, double d_output, Parameters& grad) const;

  friend bool operator==(const FactorizationModel&, const FactorizationModel&) = default;
};

struct ModelBundle {
  FactorizationModel prediction;  // r_hat, sigmoid
  FactorizationModel imputation;  // e_hat, sigmoid scaled to [0, E0]
  FactorizationModel weight;      // w_hat, exp
  std::optional<FactorizationModel> propensity;  // p_hat, sigmoid

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

struct AdamOptions {
  double learning_rate = 0.05;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamOptions options;
  Parameters first_moment;
  Parameters second_moment;
  std::int64_t step = 0;

  static OptimizerState for_model(const FactorizationModel& model, const AdamOptions& options);
};

// One Adam update with decoupled weight decay. Throws NumericError naming the
// offending parameter group when the gradient is not finite.
void gradient_step(FactorizationModel& model, OptimizerState& state, const Parameters& gradient);

struct Checkpoint {
  ModelBundle bundle;
  std::string config_hash;
};

// Text format with shape headers; doubles are written as hex floats so a
// load of a saved checkpoint reproduces every bit.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kbcf
