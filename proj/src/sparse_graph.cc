#include "metapn/sparse_graph.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "metapn/error.h"

namespace metapn {

CsrMatrix::CsrMatrix(std::size_t n_rows, std::size_t n_cols,
                     std::vector<std::size_t> row_offsets, std::vector<NodeIndex> col_indices,
                     std::vector<double> values)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  if (row_offsets_.size() != n_rows_ + 1 || row_offsets_.front() != 0 ||
      row_offsets_.back() != values_.size() || col_indices_.size() != values_.size()) {
    throw Error(ErrorCode::kMalformedInput, "inconsistent CSR offsets");
  }
  for (std::size_t r = 0; r < n_rows_; ++r) {
    if (row_offsets_[r] > row_offsets_[r + 1]) {
      throw Error(ErrorCode::kMalformedInput,
                  "row offsets decrease at row " + std::to_string(r));
    }
    for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      if (col_indices_[k] >= n_cols_) {
        throw Error(ErrorCode::kMalformedInput,
                    "column " + std::to_string(col_indices_[k]) + " in row " +
                        std::to_string(r) + " exceeds " + std::to_string(n_cols_));
      }
      if (k > row_offsets_[r] && col_indices_[k] <= col_indices_[k - 1]) {
        throw Error(ErrorCode::kMalformedInput,
                    "columns not strictly increasing in row " + std::to_string(r));
      }
    }
  }
}

double CsrMatrix::at(std::size_t r, std::size_t c) const {
  auto cols = row_cols(r);
  auto it = std::lower_bound(cols.begin(), cols.end(), c);
  if (it == cols.end() || *it != c) return 0.0;
  return values_[row_offsets_[r] + static_cast<std::size_t>(it - cols.begin())];
}

DenseMatrix CsrMatrix::to_dense() const {
  DenseMatrix out(n_rows_, n_cols_);
  for (std::size_t r = 0; r < n_rows_; ++r) {
    auto cols = row_cols(r);
    auto vals = row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) out(r, cols[k]) = vals[k];
  }
  return out;
}

CsrMatrix from_edge_list(std::size_t n, std::span<const Edge> edges) {
  std::vector<std::vector<NodeIndex>> adjacency(n);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [u, v] = edges[e];
    if (u >= n || v >= n) {
      throw Error(ErrorCode::kOutOfRange,
                  "edge #" + std::to_string(e) + " (" + std::to_string(u) + ", " +
                      std::to_string(v) + ") has an endpoint >= n=" + std::to_string(n));
    }
    if (u == v) continue;
    adjacency[u].push_back(v);
    adjacency[v].push_back(u);
  }

  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<NodeIndex> cols;
  for (std::size_t u = 0; u < n; ++u) {
    auto& nbrs = adjacency[u];
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    cols.insert(cols.end(), nbrs.begin(), nbrs.end());
    offsets[u + 1] = cols.size();
  }
  std::vector<double> values(cols.size(), 1.0);
  return CsrMatrix(n, n, std::move(offsets), std::move(cols), std::move(values));
}

CsrMatrix sym_normalize_with_self_loops(const CsrMatrix& adj) {
  const std::size_t n = adj.rows();
  if (adj.cols() != n) {
    throw Error(ErrorCode::kShapeMismatch,
                "normalization needs a square matrix, got " + std::to_string(n) + "x" +
                    std::to_string(adj.cols()));
  }

  // Row sums of A + I, ignoring any stored diagonal so the loop is added once.
  std::vector<double> degree(n, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto cols = adj.row_cols(r);
    auto vals = adj.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (cols[k] != r) degree[r] += vals[k];
    }
  }
  std::vector<double> inv_sqrt(n);
  for (std::size_t r = 0; r < n; ++r) inv_sqrt[r] = 1.0 / std::sqrt(degree[r]);

  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<NodeIndex> out_cols;
  std::vector<double> out_vals;
  out_cols.reserve(adj.nnz() + n);
  out_vals.reserve(adj.nnz() + n);
  for (std::size_t r = 0; r < n; ++r) {
    auto cols = adj.row_cols(r);
    auto vals = adj.row_values(r);
    bool diagonal_done = false;
    for (std::size_t k = 0; k <= cols.size(); ++k) {
      if (!diagonal_done && (k == cols.size() || cols[k] >= r)) {
        out_cols.push_back(r);
        out_vals.push_back(inv_sqrt[r] * inv_sqrt[r]);
        diagonal_done = true;
      }
      if (k == cols.size()) break;
      if (cols[k] == r) continue;
      out_cols.push_back(cols[k]);
      // Same product order for (r, c) and (c, r) keeps the result exactly symmetric.
      const double lo = inv_sqrt[std::min(r, cols[k])];
      const double hi = inv_sqrt[std::max(r, cols[k])];
      out_vals.push_back(vals[k] * (lo * hi));
    }
    offsets[r + 1] = out_cols.size();
  }
  return CsrMatrix(n, n, std::move(offsets), std::move(out_cols), std::move(out_vals));
}

DenseMatrix spmm(const CsrMatrix& t, const DenseMatrix& x) {
  if (t.cols() != x.rows()) {
    throw Error(ErrorCode::kShapeMismatch,
                "spmm: " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) +
                    " times " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
  DenseMatrix out(t.rows(), x.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto cols = t.row_cols(r);
    auto vals = t.row_values(r);
    auto dst = out.row(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      auto src = x.row(cols[k]);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += vals[k] * src[j];
    }
  }
  return out;
}

}  // namespace metapn
