#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kafgru/numerics.hpp"

using namespace kafgru;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
  return m;
}

// Naive triple loop, the independent oracle for matmul.
Matrix matmul_naive(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul basics") {
  Rng rng(42);
  Matrix m = random_matrix(3, 3, rng);

  SECTION("identity is neutral") {
    const Matrix prod = matmul(Matrix::identity(3), m);
    for (std::size_t i = 0; i < m.data.size(); ++i)
      CHECK(prod.data[i] == m.data[i]);
  }
  SECTION("hand arithmetic") {
    const Matrix a(2, 2, {1, 2, 3, 4});
    const Matrix b(2, 1, {1, 1});
    const Matrix p = matmul(a, b);
    CHECK(p(0, 0) == 3.0);
    CHECK(p(1, 0) == 7.0);
  }
  SECTION("matches the triple-loop oracle") {
    const Matrix a = random_matrix(5, 7, rng);
    const Matrix b = random_matrix(7, 2, rng);
    const Matrix fast = matmul(a, b);
    const Matrix slow = matmul_naive(a, b);
    for (std::size_t i = 0; i < fast.data.size(); ++i)
      CHECK(std::abs(fast.data[i] - slow.data[i]) < 1e-12);
  }
  SECTION("dimension mismatch") {
    CHECK_THROWS_AS(matmul(random_matrix(2, 3, rng), random_matrix(2, 3, rng)), ShapeError);
  }
}

TEST_CASE("matmul is associative on random conforming triples") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6);
    const std::size_t p = 1 + rng.below(6), q = 1 + rng.below(6);
    const Matrix a = random_matrix(m, n, rng);
    const Matrix b = random_matrix(n, p, rng);
    const Matrix c = random_matrix(p, q, rng);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.data.size(); ++i) {
      const double scale = std::max({1.0, std::abs(left.data[i]), std::abs(right.data[i])});
      CHECK(std::abs(left.data[i] - right.data[i]) / scale < 1e-9);
    }
  }
}

TEST_CASE("transposed accumulation products agree with explicit transposes") {
  Rng rng(11);
  const Matrix a = random_matrix(6, 4, rng);
  const Matrix b = random_matrix(6, 5, rng);
  Matrix acc(4, 5);
  add_product_at_b(acc, a, b);
  const Matrix expect = matmul(transpose(a), b);
  for (std::size_t i = 0; i < acc.data.size(); ++i)
    CHECK(std::abs(acc.data[i] - expect.data[i]) < 1e-12);
}

TEST_CASE("sigmoid") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(2.0) == Catch::Approx(0.8807970779778823).epsilon(1e-14));
  SECTION("no overflow at extreme inputs") {
    const double hi = sigmoid(1000.0);
    const double lo = sigmoid(-1000.0);
    CHECK(hi <= 1.0);
    CHECK(hi >= 1.0 - 1e-12);
    CHECK(lo >= 0.0);
    CHECK(lo <= 1e-12);
    CHECK(std::isfinite(sigmoid(1e3)));
    CHECK(std::isfinite(sigmoid(-1e3)));
  }
  SECTION("sigmoid(s) + sigmoid(-s) == 1") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const double s = rng.uniform(-40.0, 40.0);
      CHECK(std::abs(sigmoid(s) + sigmoid(-s) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("tanh") {
  CHECK(kafgru::tanh(0.0) == 0.0);
  CHECK(kafgru::tanh(1.0) == Catch::Approx(0.7615941559557649).epsilon(1e-14));
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double s = rng.uniform(-5.0, 5.0);
    CHECK(kafgru::tanh(-s) == -kafgru::tanh(s));
    CHECK(std::abs(kafgru::tanh(s)) < 1.0);
  }
}

TEST_CASE("softmax") {
  SECTION("uniform on all-zero input") {
    const Vector out = softmax(Vector(10, 0.0));
    for (double v : out) CHECK(v == Catch::Approx(0.1).epsilon(1e-14));
  }
  SECTION("shift invariance") {
    const Vector v{0.3, -1.2, 2.5, 0.0};
    Vector shifted = v;
    for (double& x : shifted) x += 100.0;
    const Vector a = softmax(v), b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
  SECTION("values against a log-sum-exp evaluation") {
    const Vector out = softmax({1.0, 2.0, 3.0});
    CHECK(out[0] == Catch::Approx(0.09003057317038046).epsilon(1e-9));
    CHECK(out[1] == Catch::Approx(0.24472847105479767).epsilon(1e-9));
    CHECK(out[2] == Catch::Approx(0.66524095577482183).epsilon(1e-9));
  }
  SECTION("sums to one with entries in (0,1) even at extreme magnitudes") {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
      Vector v(1 + rng.below(12));
      for (double& x : v) x = rng.uniform(-500.0, 500.0);
      double top = v[0];
      for (double x : v) top = std::max(top, x);
      const Vector out = softmax(v);
      double sum = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        // entries more than ~745 below the max underflow to exactly 0, which
        // is the correctly rounded double for e^(x - lse)
        if (v[i] - top > -700.0) CHECK(out[i] > 0.0);
        CHECK(out[i] >= 0.0);
        CHECK(out[i] < 1.0 + 1e-15);
        sum += out[i];
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("solve_spd") {
  SECTION("identity system") {
    const Vector d{1.0, -2.0, 3.0};
    const Vector x = solve_spd(Matrix::identity(3), d);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(x[i] == Catch::Approx(d[i]).epsilon(1e-14));
  }
  SECTION("scaled identity") {
    Matrix k = Matrix::identity(4);
    for (std::size_t i = 0; i < 4; ++i) k(i, i) = 2.0;
    const Vector d{1.0, 2.0, 3.0, 4.0};
    const Vector x = solve_spd(k, d);
    for (std::size_t i = 0; i < 4; ++i) CHECK(x[i] == Catch::Approx(d[i] / 2.0).epsilon(1e-14));
  }
  SECTION("gaussian gram system verified by multiplying back") {
    const std::size_t n = 10;
    Matrix k(n, n);
    Vector d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = -4.0 + 8.0 * double(i) / double(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double t = d[i] - d[j];
        k(i, j) = std::exp(-0.2109375 * t * t);
      }
      k(i, i) += 1e-4;
    }
    const Vector x = solve_spd(k, d);
    double norm_rhs = 0.0, norm_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += k(i, j) * x[j];
      norm_res = std::max(norm_res, std::abs(acc - d[i]));
      norm_rhs = std::max(norm_rhs, std::abs(d[i]));
    }
    CHECK(norm_res <= 1e-8 * norm_rhs);
  }
  SECTION("residual bound on random SPD systems up to size 20") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.below(20);
      Matrix b = random_matrix(n, n, rng);
      Matrix k(n, n);  // B B^T + I, SPD by construction
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = i == j ? 1.0 : 0.0;
          for (std::size_t p = 0; p < n; ++p) acc += b(i, p) * b(j, p);
          k(i, j) = acc;
        }
      Vector rhs(n);
      for (double& v : rhs) v = rng.uniform(-2.0, 2.0);
      const Vector x = solve_spd(k, rhs);
      double norm_rhs = 0.0, norm_res = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += k(i, j) * x[j];
        norm_res = std::max(norm_res, std::abs(acc - rhs[i]));
        norm_rhs = std::max(norm_rhs, std::abs(rhs[i]));
      }
      CHECK(norm_res <= 1e-8 * norm_rhs);
    }
  }
  SECTION("non-SPD input fails the factorization") {
    Matrix k = Matrix::identity(3);
    k(1, 1) = -1.0;
    CHECK_THROWS_AS(solve_spd(k, Vector{1, 2, 3}), NumericalError);
  }
  SECTION("asymmetric input is rejected") {
    Matrix k = Matrix::identity(3);
    k(0, 1) = 0.5;
    CHECK_THROWS_AS(solve_spd(k, Vector{1, 2, 3}), std::invalid_argument);
  }
}

TEST_CASE("rng determinism and splitting") {
  SECTION("fixed seed reproduces the identical sequence") {
    Rng a(123456), b(123456);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  }
  SECTION("split streams differ from the parent") {
    Rng parent(9);
    Rng child = parent.split();
    bool any_diff = false;
    for (int i = 0; i < 64; ++i)
      if (parent.next_u64() != child.next_u64()) any_diff = true;
    CHECK(any_diff);
  }
  SECTION("uniform stays in range") {
    Rng rng(2);
    for (int i = 0; i < 10000; ++i) {
      const double u = rng.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
  }
  SECTION("below is within bounds and covers values") {
    Rng rng(31);
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 7000; ++i) ++seen[rng.below(7)];
    for (int count : seen) CHECK(count > 0);
  }
}
