#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace kbcf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// A (user, item) cell of the interaction grid.
struct Pair {
  int user = 0;
  int item = 0;

  friend bool operator==(const Pair&, const Pair&) = default;
};

using PairList = std::vector<Pair>;

}  // namespace kbcf
