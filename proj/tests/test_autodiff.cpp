#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>

#include "prvr/autodiff.hpp"
#include "prvr/numerics.hpp"

using namespace prvr;
using Catch::Approx;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data) v = u(rng);
  return m;
}

std::vector<double> flatten(const std::vector<Matrix>& ms) {
  std::vector<double> out;
  for (const auto& m : ms) out.insert(out.end(), m.data.begin(), m.data.end());
  return out;
}

std::vector<Matrix> unflatten(const std::vector<Matrix>& shapes, const std::vector<double>& flat) {
  std::vector<Matrix> out = shapes;
  std::size_t k = 0;
  for (auto& m : out)
    for (double& v : m.data) v = flat[k++];
  return out;
}

using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Runs the builder on tape leaves, backprops, and compares every input
/// gradient against central differences.
void check_op(const std::vector<Matrix>& inputs, const Builder& build, double tol = 1e-4) {
  ad::Tape t;
  std::vector<ad::Var> vars;
  for (const auto& m : inputs) vars.push_back(t.leaf(m));
  ad::Var root = build(t, vars);
  REQUIRE(t.val(root).rows == 1);
  REQUIRE(t.val(root).cols == 1);
  t.backward(root);
  std::vector<Matrix> grads;
  for (auto v : vars) grads.push_back(t.grad(v));

  auto f = [&](const std::vector<double>& flat) {
    ad::Tape t2;
    std::vector<ad::Var> vs;
    for (const auto& m : unflatten(inputs, flat)) vs.push_back(t2.leaf(m));
    return t2.val(build(t2, vs)).at(0, 0);
  };
  const auto rep = check_gradient(f, flatten(inputs), flatten(grads), 1e-5);
  INFO("worst parameter: " << rep.worst_parameter);
  CHECK(rep.max_relative_error < tol);
}

/// Random weights folded into the builder so matrix outputs reduce to a scalar.
Builder reduce(Matrix weights, std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> op) {
  return [weights, op](ad::Tape& t, const std::vector<ad::Var>& vs) {
    return t.weighted_sum(op(t, vs), weights);
  };
}

}  // namespace

TEST_CASE("tape: elementwise and arithmetic op gradients", "[autodiff]") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
    Matrix w = random_matrix(3, 4, rng);
    check_op({a, b}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.add(v[0], v[1]);
             }));
    check_op({a, b}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.sub(v[0], v[1]);
             }));
    check_op({a, b}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.hadamard(v[0], v[1]);
             }));
    Matrix mask = random_matrix(3, 4, rng);
    check_op({a}, reduce(w, [mask](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.mul_mask(v[0], mask);
             }));
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.scale(v[0], -1.7);
             }));
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.add_const(v[0], 0.9);
             }));
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.exp_elem(t.scale(v[0], 0.5));
             }));
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.log_elem(t.add_const(t.exp_elem(v[0]), 0.1));
             }));
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.softplus_elem(t.scale(v[0], 3.0));
             }));
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.pow_elem(t.add_const(t.softplus_elem(v[0]), 0.2), 1.7);
             }));
  }
}

TEST_CASE("tape: matmul family gradients", "[autodiff]") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng);
    Matrix w = random_matrix(3, 5, rng);
    check_op({a, b}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.matmul(v[0], v[1]);
             }));
    Matrix c = random_matrix(5, 4, rng);
    check_op({a, c}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.matmul_nt(v[0], v[1]);
             }));
    Matrix d = random_matrix(4, 3, rng), e = random_matrix(4, 5, rng);
    check_op({d, e}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.matmul_tn(v[0], v[1]);
             }));
    Matrix wt = random_matrix(4, 3, rng);
    check_op({a}, reduce(wt, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.transpose(v[0]);
             }));
  }
}

TEST_CASE("tape: broadcast, relu, normalization gradients", "[autodiff]") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a = random_matrix(3, 4, rng);
    Matrix bias = random_matrix(1, 4, rng);
    Matrix w = random_matrix(3, 4, rng);
    check_op({a, bias}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.add_rowvec(v[0], v[1]);
             }));
    // keep inputs away from the relu kink
    Matrix ar = a;
    for (double& v : ar.data)
      if (std::abs(v) < 0.05) v = 0.1;
    check_op({ar}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.relu(v[0]);
             }));
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.row_normalize(v[0]);
             }));
    Matrix gain = random_matrix(1, 4, rng, 0.5, 1.5);
    check_op({a, gain, bias}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.layer_norm(v[0], v[1], v[2], 1e-5);
             }));
    Matrix s = random_matrix(3, 1, rng);
    check_op({a, s}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.scale_rows(v[0], v[1]);
             }));
  }
}

TEST_CASE("tape: masked softmax gradient", "[autodiff]") {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a = random_matrix(3, 5, rng);
    Matrix valid(3, 5);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 5; ++j) valid.at(i, j) = (rng() % 4) ? 1.0 : 0.0;
      valid.at(i, i) = 1.0;
    }
    Matrix w = random_matrix(3, 5, rng);
    check_op({a}, reduce(w, [valid](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.softmax_rows(v[0], &valid);
             }));
  }
}

TEST_CASE("tape: shape ops gradients", "[autodiff]") {
  std::mt19937_64 rng(45);
  Matrix a = random_matrix(3, 4, rng), b = random_matrix(2, 4, rng), c = random_matrix(3, 2, rng);
  Matrix w5 = random_matrix(5, 4, rng);
  check_op({a, b}, reduce(w5, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.concat_rows({v[0], v[1]});
           }));
  Matrix w6 = random_matrix(3, 6, rng);
  check_op({a, c}, reduce(w6, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.concat_cols({v[0], v[1]});
           }));
  Matrix w2 = random_matrix(2, 4, rng);
  check_op({a}, reduce(w2, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.slice_rows(v[0], 1, 3);
           }));
  Matrix w32 = random_matrix(3, 2, rng);
  check_op({a}, reduce(w32, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.slice_cols(v[0], 1, 3);
           }));
  Matrix w4 = random_matrix(4, 4, rng);
  check_op({a}, reduce(w4, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.select_rows(v[0], {2, 0, 2, 1});  // duplicates accumulate
           }));
  Matrix w34 = random_matrix(3, 4, rng);
  check_op({a}, reduce(w34, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.zero_rows(v[0], {1, 0, 1});
           }));
  Matrix sq = random_matrix(4, 4, rng);
  Matrix w41 = random_matrix(4, 1, rng);
  check_op({sq}, reduce(w41, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.diag(v[0]);
           }));
  check_op({a}, reduce(Matrix(1, 1, 1.0), [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.sum_all(v[0]);
           }));
  check_op({a}, reduce(Matrix(1, 1, 1.0), [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.mean_all(v[0]);
           }));
  Matrix w31 = random_matrix(3, 1, rng);
  check_op({a}, reduce(w31, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.sum_rows(v[0]);
           }));
}

TEST_CASE("tape: row max routes gradient to the argmax", "[autodiff]") {
  std::mt19937_64 rng(46);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a = random_matrix(3, 5, rng);
    // enforce a clear gap so finite differences never cross the argmax tie
    for (int i = 0; i < 3; ++i) {
      int jm = 0;
      for (int j = 1; j < 5; ++j)
        if (a.at(i, j) > a.at(i, jm)) jm = j;
      a.at(i, jm) += 0.5;
    }
    Matrix w = random_matrix(3, 1, rng);
    check_op({a}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               return t.row_max(v[0]);
             }));
  }
}

TEST_CASE("tape: diamond graphs accumulate gradients", "[autodiff]") {
  // f(x) = sum(x*x) + sum(x), both through the same leaf
  Matrix x = Matrix::from_rows({{1.5, -0.5}});
  ad::Tape t;
  ad::Var v = t.leaf(x);
  ad::Var root = t.add(t.sum_all(t.hadamard(v, v)), t.sum_all(v));
  t.backward(root);
  CHECK(t.grad(v).at(0, 0) == Approx(2 * 1.5 + 1).margin(1e-12));
  CHECK(t.grad(v).at(0, 1) == Approx(2 * -0.5 + 1).margin(1e-12));
}

TEST_CASE("tape: composite expression matches finite differences", "[autodiff]") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = random_matrix(4, 3, rng);
    Matrix wq = random_matrix(3, 3, rng, -0.7, 0.7);
    Matrix g = random_matrix(1, 3, rng, 0.5, 1.5);
    Matrix b = random_matrix(1, 3, rng);
    Matrix w = random_matrix(4, 3, rng);
    check_op({x, wq, g, b}, reduce(w, [](ad::Tape& t, const std::vector<ad::Var>& v) {
               ad::Var h = t.layer_norm(v[0], v[2], v[3], 1e-5);
               ad::Var s = t.softmax_rows(t.matmul_nt(t.matmul(h, v[1]), h));
               return t.matmul(s, h);
             }));
  }
}
