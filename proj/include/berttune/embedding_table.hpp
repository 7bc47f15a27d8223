#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "berttune/autodiff.hpp"

namespace berttune {

/// The V x d static embedding matrix of the frozen language model. Stored as
/// a constant tensor so it can feed graph operations directly.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t vocab_size, std::size_t dim, std::vector<double> values)
      : matrix_({vocab_size, dim}, std::move(values)) {
    for (double v : matrix_.values()) {
      if (!std::isfinite(v)) throw std::invalid_argument("embedding table has non-finite entries");
    }
  }

  std::size_t vocab_size() const { return matrix_.rows(); }
  std::size_t dim() const { return matrix_.cols(); }
  std::span<const double> row(std::size_t i) const { return matrix_.row_values(i); }
  const ad::Tensor& matrix() const { return matrix_; }

 private:
  ad::Tensor matrix_ = ad::Tensor::zeros({0, 0});
};

}  // namespace berttune
