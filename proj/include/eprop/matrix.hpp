#pragma once

#include <cstddef>
#include <vector>

#include "eprop/errors.hpp"

namespace eprop {

/// Dense row-major matrix of doubles. Just enough surface for weight
/// matrices and per-synapse panels; heavier linear algebra is not needed
/// anywhere in this project.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ShapeError("Matrix: negative dimension");
  }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// Row-major sparsity pattern of the unmasked (trainable) entries of a
/// weight matrix. Masked entries stay exactly zero for the whole life of
/// the network; everything that touches per-synapse state iterates this
/// pattern instead of the full matrix.
struct SparsityPattern {
  std::vector<int> row_offsets;  // size rows+1
  std::vector<int> col_index;    // size nnz, grouped by row

  int nnz() const { return static_cast<int>(col_index.size()); }
  int rows() const { return static_cast<int>(row_offsets.size()) - 1; }

  /// Build from a 0/1 mask matrix (1 = active/trainable).
  static SparsityPattern from_mask(const std::vector<uint8_t>& mask, int rows, int cols) {
    SparsityPattern p;
    p.row_offsets.resize(rows + 1, 0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c)
        if (mask[static_cast<size_t>(r) * cols + c]) p.row_offsets[r + 1]++;
    }
    for (int r = 0; r < rows; ++r) p.row_offsets[r + 1] += p.row_offsets[r];
    p.col_index.reserve(p.row_offsets[rows]);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (mask[static_cast<size_t>(r) * cols + c]) p.col_index.push_back(c);
    return p;
  }
};

}  // namespace eprop
