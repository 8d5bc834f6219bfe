#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "thzleaf/errors.hpp"

namespace thzleaf {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  Matrix select_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] >= rows) throw InvalidArgument("row index out of range");
      std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(idx[r] * cols), cols,
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
    return out;
  }

  Matrix select_cols(std::span<const std::size_t> idx) const {
    Matrix out(rows, idx.size());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = (*this)(i, idx[j]);
    return out;
  }

  bool operator==(const Matrix&) const = default;
};

}  // namespace thzleaf
