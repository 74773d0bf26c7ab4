#include "kbcf/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kbcf/error.hpp"

namespace kbcf {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void mix(std::uint64_t& h, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  for (int b = 0; b < 8; ++b) {
    h ^= (bits >> (8 * b)) & 0xffU;
    h *= kFnvPrime;
  }
}

template <typename Fn>
void for_each_group(Parameters& p, Fn&& fn) {
  fn(p.user_factors.data(), p.user_factors.size());
  fn(p.item_factors.data(), p.item_factors.size());
  fn(p.user_bias.data(), p.user_bias.size());
  fn(p.item_bias.data(), p.item_bias.size());
  fn(&p.global_bias, 1);
}

std::string hex(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", value);
  return buf;
}

double parse_hex(const std::string& token) {
  char* end = nullptr;
  const double value = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') throw FormatError("checkpoint: bad number " + token);
  return value;
}

Link parse_link(const std::string& name) {
  if (name == "sigmoid") return Link::sigmoid;
  if (name == "exp") return Link::exp;
  if (name == "identity") return Link::identity;
  throw FormatError("checkpoint: unknown link " + name);
}

void write_block(std::ostream& out, const char* name, const double* data, Eigen::Index rows, Eigen::Index cols) {
  out << name << ' ' << rows << ' ' << cols << '\n';
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (c) out << ' ';
      // Column-major storage.
      out << hex(data[c * rows + r]);
    }
    out << '\n';
  }
}

void read_block(std::istream& in, const std::string& name, Matrix& dest) {
  std::string tag;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> tag >> rows >> cols) || tag != name || rows < 0 || cols < 0)
    throw FormatError("checkpoint: expected block " + name);
  dest.resize(rows, cols);
  std::string token;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(in >> token)) throw FormatError("checkpoint: truncated block " + name);
      dest(r, c) = parse_hex(token);
    }
}

void write_model(std::ostream& out, const std::string& role, const FactorizationModel& m) {
  out << "model " << role << ' ' << to_string(m.link) << ' ' << hex(m.scale) << '\n';
  const Parameters& p = m.params;
  write_block(out, "user_factors", p.user_factors.data(), p.user_factors.rows(), p.user_factors.cols());
  write_block(out, "item_factors", p.item_factors.data(), p.item_factors.rows(), p.item_factors.cols());
  write_block(out, "user_bias", p.user_bias.data(), p.user_bias.size(), 1);
  write_block(out, "item_bias", p.item_bias.data(), p.item_bias.size(), 1);
  write_block(out, "global_bias", &p.global_bias, 1, 1);
}

FactorizationModel read_model(std::istream& in, const std::string& role) {
  std::string tag, name, link, scale;
  if (!(in >> tag >> name >> link >> scale) || tag != "model" || name != role)
    throw FormatError("checkpoint: expected model " + role);
  FactorizationModel m;
  m.link = parse_link(link);
  m.scale = parse_hex(scale);
  Matrix buffer;
  read_block(in, "user_factors", m.params.user_factors);
  read_block(in, "item_factors", m.params.item_factors);
  read_block(in, "user_bias", buffer);
  m.params.user_bias = buffer.col(0);
  read_block(in, "item_bias", buffer);
  m.params.item_bias = buffer.col(0);
  read_block(in, "global_bias", buffer);
  m.params.global_bias = buffer(0, 0);
  if (m.params.user_factors.cols() != m.params.item_factors.cols() ||
      m.params.user_bias.size() != m.params.user_factors.rows() ||
      m.params.item_bias.size() != m.params.item_factors.rows())
    throw FormatError("checkpoint: inconsistent shapes in model " + role);
  return m;
}

}  // namespace

std::string to_string(Link link) {
  switch (link) {
    case Link::sigmoid: return "sigmoid";
    case Link::exp: return "exp";
    case Link::identity: return "identity";
  }
  return "?";
}

Parameters Parameters::zeros(int n_users, int n_items, int dim) {
  Parameters p;
  p.user_factors = Matrix::Zero(n_users, dim);
  p.item_factors = Matrix::Zero(n_items, dim);
  p.user_bias = Vector::Zero(n_users);
  p.item_bias = Vector::Zero(n_items);
  p.global_bias = 0.0;
  return p;
}

Parameters Parameters::zeros_like() const {
  return zeros(static_cast<int>(user_factors.rows()), static_cast<int>(item_factors.rows()),
               static_cast<int>(user_factors.cols()));
}

std::size_t Parameters::count() const {
  return static_cast<std::size_t>(user_factors.size() + item_factors.size() + user_bias.size() +
                                  item_bias.size() + 1);
}

bool Parameters::same_shape(const Parameters& o) const {
  return user_factors.rows() == o.user_factors.rows() && user_factors.cols() == o.user_factors.cols() &&
         item_factors.rows() == o.item_factors.rows() && item_factors.cols() == o.item_factors.cols() &&
         user_bias.size() == o.user_bias.size() && item_bias.size() == o.item_bias.size();
}

std::string Parameters::first_non_finite_group() const {
  if (!user_factors.allFinite()) return "user_factors";
  if (!item_factors.allFinite()) return "item_factors";
  if (!user_bias.allFinite()) return "user_bias";
  if (!item_bias.allFinite()) return "item_bias";
  if (!std::isfinite(global_bias)) return "global_bias";
  return {};
}

std::uint64_t Parameters::checksum() const {
  std::uint64_t h = kFnvOffset;
  auto& self = const_cast<Parameters&>(*this);
  for_each_group(self, [&h](const double* data, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k) mix(h, data[k]);
  });
  return h;
}

FactorizationModel FactorizationModel::zeros(int n_users, int n_items, int dim, Link link, double scale) {
  return {Parameters::zeros(n_users, n_items, dim), link, scale};
}

FactorizationModel FactorizationModel::random(int n_users, int n_items, int dim, Link link, Rng& rng,
                                              double init_range, double scale) {
  FactorizationModel m = zeros(n_users, n_items, dim, link, scale);
  for (int u = 0; u < n_users; ++u)
    for (int k = 0; k < dim; ++k) m.params.user_factors(u, k) = rng.uniform(-init_range, init_range);
  for (int i = 0; i < n_items; ++i)
    for (int k = 0; k < dim; ++k) m.params.item_factors(i, k) = rng.uniform(-init_range, init_range);
  return m;
}

double FactorizationModel::score(Pair p) const {
  if (p.user < 0 || p.user >= n_users() || p.item < 0 || p.item >= n_items())
    throw RequestError("pair (" + std::to_string(p.user) + ", " + std::to_string(p.item) + ") out of range");
  return params.user_factors.row(p.user).dot(params.item_factors.row(p.item)) + params.user_bias(p.user) +
         params.item_bias(p.item) + params.global_bias;
}

double FactorizationModel::forward(Pair p) const {
  const double s = score(p);
  switch (link) {
    case Link::sigmoid: return scale / (1.0 + std::exp(-s));
    case Link::exp: return scale * std::exp(s);
    case Link::identity: return scale * s;
  }
  return 0.0;
}

double FactorizationModel::output_derivative(Pair p) const {
  const double s = score(p);
  switch (link) {
    case Link::sigmoid: {
      const double sig = 1.0 / (1.0 + std::exp(-s));
      return scale * sig * (1.0 - sig);
    }
    case Link::exp: return scale * std::exp(s);
    case Link::identity: return scale;
  }
  return 0.0;
}

void FactorizationModel::backward(Pair p, double d_output, Parameters& grad) const {
  const double g = d_output * output_derivative(p);
  if (g == 0.0) return;
  grad.user_factors.row(p.user) += g * params.item_factors.row(p.item);
  grad.item_factors.row(p.item) += g * params.user_factors.row(p.user);
  grad.user_bias(p.user) += g;
  grad.item_bias(p.item) += g;
  grad.global_bias += g;
}

OptimizerState OptimizerState::for_model(const FactorizationModel& model, const AdamOptions& options) {
  return {options, model.params.zeros_like(), model.params.zeros_like(), 0};
}

void gradient_step(FactorizationModel& model, OptimizerState& state, const Parameters& gradient) {
  if (!gradient.same_shape(model.params)) throw ShapeError("gradient shape does not match model parameters");
  if (const auto group = gradient.first_non_finite_group(); !group.empty())
    throw NumericError("non-finite gradient in parameter group " + group);

  const AdamOptions& o = state.options;
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));

  auto update = [&](double* theta, double* m, double* v, const double* g, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= o.learning_rate * (m_hat / (std::sqrt(v_hat) + o.epsilon) + o.weight_decay * theta[k]);
    }
  };
  Parameters& p = model.params;
  Parameters& m = state.first_moment;
  Parameters& v = state.second_moment;
  update(p.user_factors.data(), m.user_factors.data(), v.user_factors.data(), gradient.user_factors.data(),
         p.user_factors.size());
  update(p.item_factors.data(), m.item_factors.data(), v.item_factors.data(), gradient.item_factors.data(),
         p.item_factors.size());
  update(p.user_bias.data(), m.user_bias.data(), v.user_bias.data(), gradient.user_bias.data(), p.user_bias.size());
  update(p.item_bias.data(), m.item_bias.data(), v.item_bias.data(), gradient.item_bias.data(), p.item_bias.size());
  update(&p.global_bias, &m.global_bias, &v.global_bias, &gradient.global_bias, 1);
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  const ModelBundle& b = checkpoint.bundle;
  out << "kbcf-checkpoint 1\n";
  out << "config_hash " << (checkpoint.config_hash.empty() ? "-" : checkpoint.config_hash) << '\n';
  out << "models " << (b.propensity ? 4 : 3) << '\n';
  write_model(out, "prediction", b.prediction);
  write_model(out, "imputation", b.imputation);
  write_model(out, "weight", b.weight);
  if (b.propensity) write_model(out, "propensity", *b.propensity);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string tag, hash;
  int version = 0, n_models = 0;
  if (!(in >> tag >> version) || tag != "kbcf-checkpoint" || version != 1)
    throw FormatError("not a kbcf checkpoint: " + path.string());
  if (!(in >> tag >> hash) || tag != "config_hash") throw FormatError("checkpoint: missing config_hash");
  if (!(in >> tag >> n_models) || tag != "models" || (n_models != 3 && n_models != 4))
    throw FormatError("checkpoint: bad model count");
  Checkpoint c;
  c.config_hash = hash == "-" ? "" : hash;
  c.bundle.prediction = read_model(in, "prediction");
  c.bundle.imputation = read_model(in, "imputation");
  c.bundle.weight = read_model(in, "weight");
  if (n_models == 4) c.bundle.propensity = read_model(in, "propensity");
  const auto& ref = c.bundle.prediction.params;
  auto check = [&](const FactorizationModel& m) {
    if (m.n_users() != ref.user_factors.rows() || m.n_items() != ref.item_factors.rows())
      throw FormatError("checkpoint: models disagree on n_users / n_items");
  };
  check(c.bundle.imputation);
  check(c.bundle.weight);
  if (c.bundle.propensity) check(*c.bundle.propensity);
  return c;
}

}  // namespace kbcf
