#pragma once

#include <cstddef>
#include <vector>

#include <cblas.h>

#include "sound2loc/error.hpp"

namespace s2l {

// Dense row-major double matrix. The training kernel only needs products,
// transposes and elementwise loops, so this stays deliberately small.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// OpenBLAS spawns worker threads by default; pin it to one so repeated runs
// reduce in the same order and results are bit-reproducible.
inline void ensure_single_thread_blas() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

// C = op(a) * op(b) via dgemm.
inline Matrix matmul(const Matrix& a, const Matrix& b, bool trans_a = false, bool trans_b = false) {
  ensure_single_thread_blas();
  const std::size_t m = trans_a ? a.cols : a.rows;
  const std::size_t k = trans_a ? a.rows : a.cols;
  const std::size_t kb = trans_b ? b.cols : b.rows;
  const std::size_t n = trans_b ? b.rows : b.cols;
  if (k != kb) throw ShapeError("matmul: inner dimensions disagree");
  Matrix c(m, n);
  if (m == 0 || n == 0 || k == 0) return c;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a.data.data(), static_cast<int>(a.cols), b.data.data(),
              static_cast<int>(b.cols), 0.0, c.data.data(), static_cast<int>(c.cols));
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace s2l
