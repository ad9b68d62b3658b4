#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "prvr/numerics.hpp"

using namespace prvr;
using Catch::Approx;

TEST_CASE("softmax rows: frozen values", "[numerics]") {
  Matrix m = Matrix::from_rows({{1, 2, 3}});
  Matrix s = softmax_rows(m);
  CHECK(s.at(0, 0) == Approx(0.09003057317038046).epsilon(1e-5));
  CHECK(s.at(0, 1) == Approx(0.24472847105479764).epsilon(1e-5));
  CHECK(s.at(0, 2) == Approx(0.6652409557748219).epsilon(1e-5));
}

TEST_CASE("softmax rows: symmetry and shift invariance", "[numerics]") {
  Matrix m = Matrix::from_rows({{0, 0}});
  Matrix s = softmax_rows(m);
  CHECK(s.at(0, 0) == Approx(0.5).margin(1e-15));
  CHECK(s.at(0, 1) == Approx(0.5).margin(1e-15));

  Matrix c = Matrix::from_rows({{7.25, 7.25, 7.25}});
  Matrix sc = softmax_rows(c);
  for (int j = 0; j < 3; ++j) CHECK(sc.at(0, j) == Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("softmax rows: masked positions are exactly zero, rows sum to 1", "[numerics]") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix m(3, 5);
    Matrix valid(3, 5);
    for (int i = 0; i < 3; ++i) {
      int nv = 0;
      for (int j = 0; j < 5; ++j) {
        m.at(i, j) = u(rng);
        valid.at(i, j) = (rng() & 1) ? 1.0 : 0.0;
        nv += valid.at(i, j) != 0.0;
      }
      if (nv == 0) valid.at(i, 0) = 1.0;
    }
    Matrix s = softmax_rows(m, &valid);
    for (int i = 0; i < 3; ++i) {
      double sum = 0;
      for (int j = 0; j < 5; ++j) {
        if (valid.at(i, j) == 0.0) CHECK(s.at(i, j) == 0.0);
        else CHECK(s.at(i, j) >= 0.0);
        sum += s.at(i, j);
      }
      CHECK(sum == Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("softmax rows: shift invariance property", "[numerics]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix m(2, 4), shifted(2, 4);
    const double c = u(rng) * 10;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) {
        m.at(i, j) = u(rng);
        shifted.at(i, j) = m.at(i, j) + c;
      }
    Matrix a = softmax_rows(m), b = softmax_rows(shifted);
    for (std::size_t k = 0; k < a.size(); ++k)
      CHECK(a.data[k] == Approx(b.data[k]).margin(1e-9));
  }
}

TEST_CASE("softmax rows: degenerate row rejected", "[numerics]") {
  Matrix m = Matrix::from_rows({{1, 2}});
  Matrix valid(1, 2);  // nothing valid
  CHECK_THROWS_AS(softmax_rows(m, &valid), std::invalid_argument);
}

TEST_CASE("layer norm: constant row maps to bias", "[numerics]") {
  Matrix x = Matrix::from_rows({{1, 1, 1}});
  Matrix g(1, 3, 1.0), b(1, 3, 0.0);
  Matrix y = layer_norm(x, g, b, 1e-5);
  for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == Approx(0.0).margin(1e-12));

  Matrix b2 = Matrix::from_rows({{0.5, -0.25, 2.0}});
  Matrix g0(1, 3, 0.0);
  Matrix x2 = Matrix::from_rows({{3, -1, 4}});
  Matrix y2 = layer_norm(x2, g0, b2, 1e-5);
  for (int j = 0; j < 3; ++j) CHECK(y2.at(0, j) == b2.at(0, j));
}

TEST_CASE("layer norm: analytic normalization as eps -> 0", "[numerics]") {
  Matrix x = Matrix::from_rows({{1, -1}});
  Matrix g(1, 2, 1.0), b(1, 2, 0.0);
  Matrix y = layer_norm(x, g, b, 1e-12);
  CHECK(y.at(0, 0) == Approx(1.0).margin(1e-9));
  CHECK(y.at(0, 1) == Approx(-1.0).margin(1e-9));
}

TEST_CASE("layer norm: per-row zero mean unit variance before gain/bias", "[numerics]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Matrix x(4, 8);
  for (double& v : x.data) v = nd(rng) * 2 + 1;
  Matrix g(1, 8, 1.0), b(1, 8, 0.0);
  Matrix y = layer_norm(x, g, b, 1e-10);
  for (int i = 0; i < 4; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 8; ++j) mu += y.at(i, j);
    mu /= 8;
    for (int j = 0; j < 8; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
    var /= 8;
    CHECK(mu == Approx(0.0).margin(1e-9));
    CHECK(var == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("cosine: identities and frozen value", "[numerics]") {
  std::vector<double> a{1, 0}, b{1, 1};
  CHECK(cosine(a, b) == Approx(0.7071067811865476).epsilon(1e-5));
  std::vector<double> c{0.3, -2.0, 1.1};
  CHECK(cosine(c, c) == Approx(1.0).margin(1e-12));
  std::vector<double> e1{1, 0}, e2{0, 5};
  CHECK(cosine(e1, e2) == Approx(0.0).margin(1e-15));
  std::vector<double> z{0, 0};
  CHECK_THROWS_AS(cosine(z, b), std::invalid_argument);
}

TEST_CASE("finite differences: quadratic, constant, linear", "[numerics]") {
  auto sq = [](const std::vector<double>& p) { return p[0] * p[0]; };
  auto g = finite_diff_grad(sq, {3.0}, 1e-4);
  CHECK(g[0] == Approx(6.0).margin(1e-6));

  auto constant = [](const std::vector<double>&) { return 42.0; };
  auto gz = finite_diff_grad(constant, {1.0, -2.0, 0.5}, 1e-5);
  for (double v : gz) CHECK(v == 0.0);

  auto lin = [](const std::vector<double>& p) {
    double s = 0;
    for (double v : p) s += v;
    return s;
  };
  auto gl = finite_diff_grad(lin, {0.2, 1.7, -3.0, 8.0}, 1e-5);
  for (double v : gl) CHECK(v == Approx(1.0).margin(1e-9));
}

TEST_CASE("finite differences: non-finite evaluation is an oracle failure", "[numerics]") {
  auto f = [](const std::vector<double>& p) { return std::log(p[0]); };
  CHECK_THROWS_AS(finite_diff_grad(f, {0.0}, 1e-3), std::runtime_error);
}

TEST_CASE("gradient check harness reports worst coordinate", "[numerics]") {
  auto f = [](const std::vector<double>& p) { return p[0] * p[0] + 3.0 * p[1]; };
  std::vector<double> p{1.5, 2.0};
  auto rep = check_gradient(f, p, {3.0, 3.0});
  CHECK(rep.max_relative_error < 1e-8);
  auto bad = check_gradient(f, p, {3.0, 4.0});
  CHECK(bad.max_relative_error > 0.2);
  CHECK(bad.worst_parameter == "p[1]");
}
