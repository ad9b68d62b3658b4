#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "prvr/matrix.hpp"

namespace prvr {

/// Row-wise softmax. `valid`, when given, is a 0/1 matrix of the same shape;
/// invalid positions are excluded from the normalization and output exactly 0.
/// A row with no valid element is a degenerate-row error.
inline Matrix softmax_rows(const Matrix& m, const Matrix* valid = nullptr) {
  if (valid && !valid->same_shape(m)) throw std::invalid_argument("softmax_rows: mask shape mismatch");
  Matrix out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.cols; ++j)
      if (!valid || valid->at(i, j) != 0.0) mx = std::max(mx, m.at(i, j));
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax_rows: row has no valid element");
    double sum = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      if (valid && valid->at(i, j) == 0.0) continue;
      const double e = std::exp(m.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < m.cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

/// Per-row layer normalization with population variance: gain * (x-mu)/sqrt(var+eps) + bias.
inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
  check_shape(gain.rows == 1 && gain.cols == x.cols, "layer_norm: gain length != cols");
  check_shape(bias.rows == 1 && bias.cols == x.cols, "layer_norm: bias length != cols");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  Matrix out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double mu = 0.0;
    for (int j = 0; j < x.cols; ++j) mu += xi[j];
    mu /= x.cols;
    double var = 0.0;
    for (int j = 0; j < x.cols; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= x.cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < x.cols; ++j) out.at(i, j) = gain.at(0, j) * (xi[j] - mu) * inv + bias.at(0, j);
  }
  return out;
}

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const double* a, int n) { return std::sqrt(dot(a, a, n)); }

/// Cosine similarity; zero vectors are an undefined-similarity error.
inline double cosine(const double* a, const double* b, int n) {
  const double na = norm2(a, n), nb = norm2(b, n);
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero vector");
  return dot(a, b, n) / (na * nb);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  return cosine(a.data(), b.data(), static_cast<int>(a.size()));
}

/// Central-difference gradient oracle: (f(p+h e_i) - f(p-h e_i)) / 2h.
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> p, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be > 0");
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + step;
    const double fp = f(p);
    p[i] = saved - step;
    const double fm = f(p);
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: non-finite function evaluation");
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  double step = 0.0;
};

/// Compares an analytic gradient against the central-difference oracle.
/// Relative error uses max(|a|, |f|, floor) as denominator so near-zero
/// coordinates are judged on an absolute scale.
inline GradCheckReport check_gradient(const std::function<double(const std::vector<double>&)>& f,
                                      const std::vector<double>& p,
                                      const std::vector<double>& analytic,
                                      double step = 1e-5,
                                      const std::vector<std::string>* names = nullptr,
                                      double floor = 1e-2) {
  if (p.size() != analytic.size()) throw std::invalid_argument("check_gradient: size mismatch");
  const std::vector<double> fd = finite_diff_grad(f, p, step);
  GradCheckReport rep;
  rep.step = step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd[i]), floor});
    const double rel = std::abs(analytic[i] - fd[i]) / denom;
    if (rel >= rep.max_relative_error) {
      rep.max_relative_error = rel;
      rep.worst_parameter = names ? (*names)[i] : ("p[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

}  // namespace prvr
