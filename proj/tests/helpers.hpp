#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "kbcf/data.hpp"
#include "kbcf/model.hpp"
#include "kbcf/rng.hpp"

namespace testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("kbcf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small dataset with a random mask and random binary outcomes; the full grid is the test grid.
inline kbcf::Dataset random_dataset(int n_users, int n_items, double observe, std::uint64_t seed) {
  kbcf::Rng rng(seed);
  kbcf::Dataset d;
  d.n_users = n_users;
  d.n_items = n_items;
  d.ratings = kbcf::Matrix::Zero(n_users, n_items);
  d.mask = kbcf::Mask::Zero(n_users, n_items);
  kbcf::Matrix outcomes(n_users, n_items);
  for (int u = 0; u < n_users; ++u)
    for (int i = 0; i < n_items; ++i) {
      outcomes(u, i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
      if (rng.bernoulli(observe)) {
        d.mask(u, i) = 1;
        d.ratings(u, i) = outcomes(u, i);
      }
    }
  if (d.mask.cast<int>().sum() == 0) {
    d.mask(0, 0) = 1;
    d.ratings(0, 0) = outcomes(0, 0);
  }
  d.test = kbcf::OutcomeGrid{outcomes, kbcf::Mask::Ones(n_users, n_items)};
  return d;
}

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// Applies f to every scalar of the parameter set, in a fixed order.
template <typename F>
void for_each_scalar(kbcf::Parameters& p, F&& f) {
  for (Eigen::Index k = 0; k < p.user_factors.size(); ++k) f(p.user_factors.data()[k]);
  for (Eigen::Index k = 0; k < p.item_factors.size(); ++k) f(p.item_factors.data()[k]);
  for (Eigen::Index k = 0; k < p.user_bias.size(); ++k) f(p.user_bias.data()[k]);
  for (Eigen::Index k = 0; k < p.item_bias.size(); ++k) f(p.item_bias.data()[k]);
  f(p.global_bias);
}

}  // namespace testing
