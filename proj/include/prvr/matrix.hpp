#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace prvr {

/// Dense row-major double matrix. Row vectors are 1 x c, column vectors r x 1.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
  }
  Matrix(int r, int c, double fill)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rws) {
    Matrix m(static_cast<int>(rws.size()), rws.size() ? static_cast<int>(rws.begin()->size()) : 0);
    int i = 0;
    for (const auto& r : rws) {
      if (static_cast<int>(r.size()) != m.cols) throw std::invalid_argument("ragged rows");
      int j = 0;
      for (double v : r) m.at(i, j++) = v;
      ++i;
    }
    return m;
  }

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
  double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Matrix& operator+=(const Matrix& o) {
    if (!same_shape(o)) throw std::invalid_argument("operator+=: shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data) v *= s;
    return *this;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

inline void check_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

/// C += A * B
inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  check_shape(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols, "matmul: shape mismatch");
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int i = 0; i < n; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.row(p);
      for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  matmul_acc(a, b, c);
  return c;
}

/// C += A * B^T
inline void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  check_shape(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows, "matmul_nt: shape mismatch");
  const int n = a.rows, k = a.cols, m = b.rows;
  for (int i = 0; i < n; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (int j = 0; j < m; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.rows);
  matmul_nt_acc(a, b, c);
  return c;
}

/// C += A^T * B
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  check_shape(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols, "matmul_tn: shape mismatch");
  const int n = a.cols, k = a.rows, m = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* ap = a.row(p);
    const double* bp = b.row(p);
    for (int i = 0; i < n; ++i) {
      const double api = ap[i];
      double* ci = c.row(i);
      for (int j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
}

inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols, b.cols);
  matmul_tn_acc(a, b, c);
  return c;
}

inline Matrix transposed(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace prvr
