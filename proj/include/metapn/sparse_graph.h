#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "metapn/dense_matrix.h"

namespace metapn {

using NodeIndex = std::size_t;
using Edge = std::pair<NodeIndex, NodeIndex>;

// Compressed sparse row matrix. Column indices are strictly increasing within
// each row; immutable once built.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  // Validates the canonical-form invariants, throws kMalformedInput otherwise.
  CsrMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<std::size_t> row_offsets,
            std::vector<NodeIndex> col_indices, std::vector<double> values);

  std::size_t rows() const noexcept { return n_rows_; }
  std::size_t cols() const noexcept { return n_cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  std::span<const std::size_t> row_offsets() const noexcept { return row_offsets_; }
  std::span<const NodeIndex> col_indices() const noexcept { return col_indices_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const NodeIndex> row_cols(std::size_t r) const {
    return {col_indices_.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
  }

  // Stored value at (r, c), zero when absent.
  double at(std::size_t r, std::size_t c) const;

  DenseMatrix to_dense() const;

 private:
  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> row_offsets_{0};
  std::vector<NodeIndex> col_indices_;
  std::vector<double> values_;
};

// Symmetric binary adjacency. Both directions are stored, duplicates collapse
// and self-loops are dropped.
CsrMatrix from_edge_list(std::size_t n, std::span<const Edge> edges);

// D̃^{-1/2} (A + I) D̃^{-1/2}, with d̃ the row sums of A + I.
CsrMatrix sym_normalize_with_self_loops(const CsrMatrix& adj);

DenseMatrix spmm(const CsrMatrix& t, const DenseMatrix& x);

}  // namespace metapn
