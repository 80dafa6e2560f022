// Minimal dense row-major matrix of doubles.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "easqe/errors.hpp"

namespace easqe {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  bool operator==(const Matrix&) const = default;
};

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols,
                          const std::string& what) {
  if (m.rows != rows || m.cols != cols)
    throw DimensionMismatchError(what + ": expected " + std::to_string(rows) +
                                 "x" + std::to_string(cols) + ", got " +
                                 std::to_string(m.rows) + "x" +
                                 std::to_string(m.cols));
}

}  // namespace easqe
