#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lst/matrix.hpp"

namespace testing {

inline lst::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -2.0,
                                 double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  lst::Matrix m(rows, cols);
  for (double& v : m.data()) v = d(rng);
  return m;
}

/// Rows are probability vectors drawn from a softmax of random scores.
inline lst::Matrix random_distributions(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return lst::softmax_rows(random_matrix(rows, cols, rng, -3.0, 3.0));
}

inline lst::Matrix scaled(lst::Matrix m, double s) {
  m *= s;
  return m;
}

inline lst::Matrix permute_rows_cols(const lst::Matrix& d, const std::vector<std::size_t>& perm) {
  lst::Matrix out(d.rows(), d.cols());
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (std::size_t j = 0; j < d.cols(); ++j) out(i, j) = d(perm[i], perm[j]);
  }
  return out;
}

inline lst::Matrix permute_rows(const lst::Matrix& m, const std::vector<std::size_t>& perm) {
  lst::Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(perm[i], j);
  }
  return out;
}

}  // namespace testing
