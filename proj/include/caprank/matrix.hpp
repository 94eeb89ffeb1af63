#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace caprank {

/// Dense row-major feature matrix.
struct FeatureMatrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<double> values;  // n_rows * n_cols

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols)
      : n_rows(rows), n_cols(cols), values(rows * cols, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return values[r * n_cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * n_cols + c]; }

  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * n_cols, n_cols};
  }
};

}  // namespace caprank
