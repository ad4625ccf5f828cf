#pragma once

#include <Eigen/Dense>

#include "agra/core/tensor.hpp"

namespace agra {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMatrix>;
using ECMap = Eigen::Map<const EMatrix>;

// 2-D Eigen view over a tensor's buffer, reinterpreted as rows x cols.
// The caller asserts the factorization; total element count must match.
inline EMap as_matrix(Tensor& t, int rows, int cols) {
  if (static_cast<int64_t>(rows) * cols != t.size())
    throw ValidationError("as_matrix: " + t.shape_str() + " cannot view as " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  return EMap(t.data(), rows, cols);
}

inline ECMap as_matrix(const Tensor& t, int rows, int cols) {
  if (static_cast<int64_t>(rows) * cols != t.size())
    throw ValidationError("as_matrix: " + t.shape_str() + " cannot view as " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  return ECMap(t.data(), rows, cols);
}

}  // namespace agra
