#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "prvr/matrix.hpp"
#include "prvr/numerics.hpp"

namespace prvr::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices. Nodes are appended in topological
/// order; backward() walks them in reverse and accumulates into parent grads.
/// Forward values live on the tape, so a Tape is also a scratch arena: clear()
/// between independent evaluations.
class Tape {
 public:
  const Matrix& val(Var v) const { return nodes_[v.id].value; }

  /// Gradient of the last backward() root w.r.t. v (zero matrix if unreached).
  const Matrix& grad(Var v) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
      n.grad = Matrix(n.value.rows, n.value.cols);
      n.has_grad = true;
    }
    return n.grad;
  }

  Var leaf(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, false});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var add(Var a, Var b) {
    check_shape(val(a).same_shape(val(b)), "add: shape mismatch");
    Matrix out = val(a);
    out += val(b);
    return push(std::move(out), [a, b](Tape& t, const Node& n) {
      t.acc(a, n.grad);
      t.acc(b, n.grad);
    });
  }

  Var sub(Var a, Var b) {
    check_shape(val(a).same_shape(val(b)), "sub: shape mismatch");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= val(b).data[i];
    return push(std::move(out), [a, b](Tape& t, const Node& n) {
      t.acc(a, n.grad);
      Matrix neg = n.grad;
      neg *= -1.0;
      t.acc(b, neg);
    });
  }

  Var scale(Var a, double s) {
    Matrix out = val(a);
    out *= s;
    return push(std::move(out), [a, s](Tape& t, const Node& n) {
      Matrix g = n.grad;
      g *= s;
      t.acc(a, g);
    });
  }

  Var add_const(Var a, double c) {
    Matrix out = val(a);
    for (double& v : out.data) v += c;
    return push(std::move(out), [a](Tape& t, const Node& n) { t.acc(a, n.grad); });
  }

  Var hadamard(Var a, Var b) {
    check_shape(val(a).same_shape(val(b)), "hadamard: shape mismatch");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= val(b).data[i];
    return push(std::move(out), [a, b](Tape& t, const Node& n) {
      Matrix ga = n.grad, gb = n.grad;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga.data[i] *= t.val(b).data[i];
        gb.data[i] *= t.val(a).data[i];
      }
      t.acc(a, ga);
      t.acc(b, gb);
    });
  }

  /// Elementwise product with a constant matrix.
  Var mul_mask(Var a, Matrix m) {
    check_shape(val(a).same_shape(m), "mul_mask: shape mismatch");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= m.data[i];
    auto mp = std::make_shared<Matrix>(std::move(m));
    return push(std::move(out), [a, mp](Tape& t, const Node& n) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= mp->data[i];
      t.acc(a, g);
    });
  }

  Var matmul(Var a, Var b) {
    return push(prvr::matmul(val(a), val(b)), [a, b](Tape& t, const Node& n) {
      t.acc_fn(a, [&](Matrix& g) { matmul_nt_acc(n.grad, t.val(b), g); });
      t.acc_fn(b, [&](Matrix& g) { matmul_tn_acc(t.val(a), n.grad, g); });
    });
  }

  Var matmul_nt(Var a, Var b) {
    return push(prvr::matmul_nt(val(a), val(b)), [a, b](Tape& t, const Node& n) {
      t.acc_fn(a, [&](Matrix& g) { matmul_acc(n.grad, t.val(b), g); });
      t.acc_fn(b, [&](Matrix& g) { matmul_tn_acc(n.grad, t.val(a), g); });
    });
  }

  Var matmul_tn(Var a, Var b) {
    return push(prvr::matmul_tn(val(a), val(b)), [a, b](Tape& t, const Node& n) {
      t.acc_fn(a, [&](Matrix& g) { matmul_nt_acc(t.val(b), n.grad, g); });
      t.acc_fn(b, [&](Matrix& g) { matmul_acc(t.val(a), n.grad, g); });
    });
  }

  Var transpose(Var a) {
    return push(transposed(val(a)),
                [a](Tape& t, const Node& n) { t.acc(a, transposed(n.grad)); });
  }

  /// Broadcast-add a 1 x c row vector to every row.
  Var add_rowvec(Var a, Var bias) {
    check_shape(val(bias).rows == 1 && val(bias).cols == val(a).cols, "add_rowvec: bias shape");
    Matrix out = val(a);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) += val(bias).at(0, j);
    return push(std::move(out), [a, bias](Tape& t, const Node& n) {
      t.acc(a, n.grad);
      Matrix gb(1, n.grad.cols);
      for (int i = 0; i < n.grad.rows; ++i)
        for (int j = 0; j < n.grad.cols; ++j) gb.at(0, j) += n.grad.at(i, j);
      t.acc(bias, gb);
    });
  }

  Var relu(Var a) {
    Matrix out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), [a](Tape& t, const Node& n) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (t.val(a).data[i] <= 0.0) g.data[i] = 0.0;
      t.acc(a, g);
    });
  }

  Var exp_elem(Var a) {
    Matrix out = val(a);
    for (double& v : out.data) v = std::exp(v);
    return push(std::move(out), [a](Tape& t, const Node& n) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= n.value.data[i];
      t.acc(a, g);
    });
  }

  Var log_elem(Var a) {
    Matrix out = val(a);
    for (double& v : out.data) v = std::log(v);
    return push(std::move(out), [a](Tape& t, const Node& n) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] /= t.val(a).data[i];
      t.acc(a, g);
    });
  }

  /// log(1 + e^x), evaluated stably.
  Var softplus_elem(Var a) {
    Matrix out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    return push(std::move(out), [a](Tape& t, const Node& n) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = t.val(a).data[i];
        g.data[i] *= 1.0 / (1.0 + std::exp(-x));
      }
      t.acc(a, g);
    });
  }

  /// x^p for x >= 0.
  Var pow_elem(Var a, double p) {
    Matrix out = val(a);
    for (double& v : out.data) v = std::pow(v, p);
    return push(std::move(out), [a, p](Tape& t, const Node& n) {
      Matrix g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = t.val(a).data[i];
        double d;
        if (x > 0.0) d = p * std::pow(x, p - 1.0);
        else d = (p == 1.0) ? 1.0 : 0.0;
        g.data[i] *= d;
      }
      t.acc(a, g);
    });
  }

  /// Rows rescaled to unit Euclidean norm.
  Var row_normalize(Var a) {
    const Matrix& x = val(a);
    Matrix out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
      const double nrm = norm2(x.row(i), x.cols);
      if (nrm == 0.0) throw std::invalid_argument("row_normalize: zero row");
      for (int j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) / nrm;
    }
    return push(std::move(out), [a](Tape& t, const Node& n) {
      const Matrix& x = t.val(a);
      Matrix g(x.rows, x.cols);
      for (int i = 0; i < x.rows; ++i) {
        const double nrm = norm2(x.row(i), x.cols);
        const double xg = dot(x.row(i), n.grad.row(i), x.cols);
        for (int j = 0; j < x.cols; ++j)
          g.at(i, j) = n.grad.at(i, j) / nrm - x.at(i, j) * xg / (nrm * nrm * nrm);
      }
      t.acc(a, g);
    });
  }

  /// Masked row softmax; see prvr::softmax_rows for the mask convention.
  Var softmax_rows(Var a, const Matrix* valid = nullptr) {
    Matrix out = prvr::softmax_rows(val(a), valid);
    return push(std::move(out), [a](Tape& t, const Node& n) {
      const Matrix& y = n.value;
      Matrix g(y.rows, y.cols);
      for (int i = 0; i < y.rows; ++i) {
        const double gy = dot(n.grad.row(i), y.row(i), y.cols);
        for (int j = 0; j < y.cols; ++j) g.at(i, j) = y.at(i, j) * (n.grad.at(i, j) - gy);
      }
      t.acc(a, g);
    });
  }

  Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Matrix out = prvr::layer_norm(val(x), val(gain), val(bias), eps);
    return push(std::move(out), [x, gain, bias, eps](Tape& t, const Node& n) {
      const Matrix& xv = t.val(x);
      const Matrix& gv = t.val(gain);
      const int c = xv.cols;
      Matrix gx(xv.rows, c), gg(1, c), gb(1, c);
      for (int i = 0; i < xv.rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += xv.at(i, j);
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xv.at(i, j) - mu) * (xv.at(i, j) - mu);
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
        for (int j = 0; j < c; ++j) {
          const double xh = (xv.at(i, j) - mu) * inv;
          const double dxh = n.grad.at(i, j) * gv.at(0, j);
          gg.at(0, j) += n.grad.at(i, j) * xh;
          gb.at(0, j) += n.grad.at(i, j);
          m1 += dxh;
          m2 += dxh * xh;
        }
        m1 /= c;
        m2 /= c;
        for (int j = 0; j < c; ++j) {
          const double xh = (xv.at(i, j) - mu) * inv;
          const double dxh = n.grad.at(i, j) * gv.at(0, j);
          gx.at(i, j) = inv * (dxh - m1 - xh * m2);
        }
      }
      t.acc(x, gx);
      t.acc(gain, gg);
      t.acc(bias, gb);
    });
  }

  /// y(i,j) = x(i,j) * s(i), s an r x 1 column.
  Var scale_rows(Var x, Var s) {
    check_shape(val(s).rows == val(x).rows && val(s).cols == 1, "scale_rows: s must be r x 1");
    Matrix out = val(x);
    for (int i = 0; i < out.rows; ++i) {
      const double si = val(s).at(i, 0);
      for (int j = 0; j < out.cols; ++j) out.at(i, j) *= si;
    }
    return push(std::move(out), [x, s](Tape& t, const Node& n) {
      const Matrix& xv = t.val(x);
      const Matrix& sv = t.val(s);
      Matrix gx(xv.rows, xv.cols), gs(xv.rows, 1);
      for (int i = 0; i < xv.rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < xv.cols; ++j) {
          gx.at(i, j) = n.grad.at(i, j) * sv.at(i, 0);
          acc += n.grad.at(i, j) * xv.at(i, j);
        }
        gs.at(i, 0) = acc;
      }
      t.acc(x, gx);
      t.acc(s, gs);
    });
  }

  Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty");
    const int c = val(xs[0]).cols;
    int r = 0;
    for (Var v : xs) {
      check_shape(val(v).cols == c, "concat_rows: column mismatch");
      r += val(v).rows;
    }
    Matrix out(r, c);
    int at = 0;
    for (Var v : xs) {
      const Matrix& m = val(v);
      std::copy(m.data.begin(), m.data.end(), out.data.begin() + static_cast<std::size_t>(at) * c);
      at += m.rows;
    }
    auto parts = xs;
    return push(std::move(out), [parts, c](Tape& t, const Node& n) {
      int at = 0;
      for (Var v : parts) {
        const int pr = t.val(v).rows;
        Matrix g(pr, c);
        std::copy(n.grad.data.begin() + static_cast<std::size_t>(at) * c,
                  n.grad.data.begin() + static_cast<std::size_t>(at + pr) * c, g.data.begin());
        t.acc(v, g);
        at += pr;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
    const int r = val(xs[0]).rows;
    int c = 0;
    for (Var v : xs) {
      check_shape(val(v).rows == r, "concat_cols: row mismatch");
      c += val(v).cols;
    }
    Matrix out(r, c);
    int at = 0;
    for (Var v : xs) {
      const Matrix& m = val(v);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < m.cols; ++j) out.at(i, at + j) = m.at(i, j);
      at += m.cols;
    }
    auto parts = xs;
    return push(std::move(out), [parts, r](Tape& t, const Node& n) {
      int at = 0;
      for (Var v : parts) {
        const int pc = t.val(v).cols;
        Matrix g(r, pc);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < pc; ++j) g.at(i, j) = n.grad.at(i, at + j);
        t.acc(v, g);
        at += pc;
      }
    });
  }

  Var slice_rows(Var x, int r0, int r1) {
    check_shape(0 <= r0 && r0 < r1 && r1 <= val(x).rows, "slice_rows: range");
    const Matrix& m = val(x);
    Matrix out(r1 - r0, m.cols);
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < m.cols; ++j) out.at(i - r0, j) = m.at(i, j);
    return push(std::move(out), [x, r0](Tape& t, const Node& n) {
      t.acc_fn(x, [&](Matrix& g) {
        for (int i = 0; i < n.grad.rows; ++i)
          for (int j = 0; j < n.grad.cols; ++j) g.at(r0 + i, j) += n.grad.at(i, j);
      });
    });
  }

  Var slice_cols(Var x, int c0, int c1) {
    check_shape(0 <= c0 && c0 < c1 && c1 <= val(x).cols, "slice_cols: range");
    const Matrix& m = val(x);
    Matrix out(m.rows, c1 - c0);
    for (int i = 0; i < m.rows; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = m.at(i, j);
    return push(std::move(out), [x, c0](Tape& t, const Node& n) {
      t.acc_fn(x, [&](Matrix& g) {
        for (int i = 0; i < n.grad.rows; ++i)
          for (int j = 0; j < n.grad.cols; ++j) g.at(i, c0 + j) += n.grad.at(i, j);
      });
    });
  }

  /// Gather rows by index; duplicate indices accumulate on backward.
  Var select_rows(Var x, std::vector<int> idx) {
    const Matrix& m = val(x);
    Matrix out(static_cast<int>(idx.size()), m.cols);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0 || idx[k] >= m.rows) throw std::invalid_argument("select_rows: index");
      for (int j = 0; j < m.cols; ++j) out.at(static_cast<int>(k), j) = m.at(idx[k], j);
    }
    auto ip = std::make_shared<std::vector<int>>(std::move(idx));
    return push(std::move(out), [x, ip](Tape& t, const Node& n) {
      t.acc_fn(x, [&](Matrix& g) {
        for (std::size_t k = 0; k < ip->size(); ++k)
          for (int j = 0; j < n.grad.cols; ++j) g.at((*ip)[k], j) += n.grad.at(static_cast<int>(k), j);
      });
    });
  }

  /// Zero out rows i with keep[i] == 0.
  Var zero_rows(Var x, std::vector<std::uint8_t> keep) {
    check_shape(static_cast<int>(keep.size()) == val(x).rows, "zero_rows: keep length");
    Matrix out = val(x);
    for (int i = 0; i < out.rows; ++i)
      if (!keep[i])
        for (int j = 0; j < out.cols; ++j) out.at(i, j) = 0.0;
    auto kp = std::make_shared<std::vector<std::uint8_t>>(std::move(keep));
    return push(std::move(out), [x, kp](Tape& t, const Node& n) {
      Matrix g = n.grad;
      for (int i = 0; i < g.rows; ++i)
        if (!(*kp)[i])
          for (int j = 0; j < g.cols; ++j) g.at(i, j) = 0.0;
      t.acc(x, g);
    });
  }

  /// Per-row max over valid positions (r x 1). Rows with no valid position get
  /// `fallback` and no gradient. Gradient routes to the first maximizer.
  Var row_max(Var x, const Matrix* valid = nullptr, double fallback = 0.0) {
    const Matrix& m = val(x);
    if (valid) check_shape(valid->same_shape(m), "row_max: mask shape");
    Matrix out(m.rows, 1);
    auto arg = std::make_shared<std::vector<int>>(m.rows, -1);
    for (int i = 0; i < m.rows; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      int bj = -1;
      for (int j = 0; j < m.cols; ++j) {
        if (valid && valid->at(i, j) == 0.0) continue;
        if (m.at(i, j) > best) {
          best = m.at(i, j);
          bj = j;
        }
      }
      (*arg)[i] = bj;
      out.at(i, 0) = bj >= 0 ? best : fallback;
    }
    return push(std::move(out), [x, arg](Tape& t, const Node& n) {
      t.acc_fn(x, [&](Matrix& g) {
        for (int i = 0; i < n.grad.rows; ++i)
          if ((*arg)[i] >= 0) g.at(i, (*arg)[i]) += n.grad.at(i, 0);
      });
    });
  }

  Var diag(Var x) {
    const Matrix& m = val(x);
    check_shape(m.rows == m.cols, "diag: square required");
    Matrix out(m.rows, 1);
    for (int i = 0; i < m.rows; ++i) out.at(i, 0) = m.at(i, i);
    return push(std::move(out), [x](Tape& t, const Node& n) {
      t.acc_fn(x, [&](Matrix& g) {
        for (int i = 0; i < n.grad.rows; ++i) g.at(i, i) += n.grad.at(i, 0);
      });
    });
  }

  Var sum_all(Var x) {
    double s = 0.0;
    for (double v : val(x).data) s += v;
    Matrix out(1, 1);
    out.at(0, 0) = s;
    return push(std::move(out), [x](Tape& t, const Node& n) {
      Matrix g(t.val(x).rows, t.val(x).cols, n.grad.at(0, 0));
      t.acc(x, g);
    });
  }

  Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(val(x).size())); }

  Var sum_rows(Var x) {
    const Matrix& m = val(x);
    Matrix out(m.rows, 1);
    for (int i = 0; i < m.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < m.cols; ++j) s += m.at(i, j);
      out.at(i, 0) = s;
    }
    return push(std::move(out), [x](Tape& t, const Node& n) {
      const Matrix& m = t.val(x);
      Matrix g(m.rows, m.cols);
      for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) g.at(i, j) = n.grad.at(i, 0);
      t.acc(x, g);
    });
  }

  /// sum(x ⊙ w) with constant weights, as a 1 x 1 scalar.
  Var weighted_sum(Var x, Matrix w) {
    check_shape(val(x).same_shape(w), "weighted_sum: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += val(x).data[i] * w.data[i];
    Matrix out(1, 1);
    out.at(0, 0) = s;
    auto wp = std::make_shared<Matrix>(std::move(w));
    return push(std::move(out), [x, wp](Tape& t, const Node& n) {
      Matrix g = *wp;
      g *= n.grad.at(0, 0);
      t.acc(x, g);
    });
  }

  /// Reverse sweep from a 1 x 1 root; grads accumulate across calls until clear().
  void backward(Var root) {
    check_shape(val(root).rows == 1 && val(root).cols == 1, "backward: root must be scalar");
    Node& r = nodes_[root.id];
    if (!r.has_grad) {
      r.grad = Matrix(1, 1);
      r.has_grad = true;
    }
    r.grad.at(0, 0) += 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.has_grad) n.back(*this, n);
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, const Node&)> back;
    bool has_grad = false;
  };

  void acc(Var v, const Matrix& g) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
      n.grad = Matrix(n.value.rows, n.value.cols);
      n.has_grad = true;
    }
    n.grad += g;
  }

  template <class F>
  void acc_fn(Var v, F&& f) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
      n.grad = Matrix(n.value.rows, n.value.cols);
      n.has_grad = true;
    }
    f(n.grad);
  }

 private:
  Var push(Matrix value, std::function<void(Tape&, const Node&)> back) {
    if (!value.all_finite()) throw std::runtime_error("tape op produced non-finite values");
    nodes_.push_back(Node{std::move(value), {}, std::move(back), false});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace prvr::ad
