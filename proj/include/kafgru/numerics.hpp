#pragma once

// Dense row-major matrix/vector arithmetic, stable scalar nonlinearities,
// a small SPD solver and a seeded, splittable random generator. Everything
// else in the library is built on top of this header. All math is double
// precision; gradient verification at 1e-5 relative error rules out floats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kafgru/errors.hpp"

namespace kafgru {

using Vector = std::vector<double>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector data;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, Vector values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
      throw ShapeError("Matrix: data length " + std::to_string(data.size()) +
                       " does not match " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline bool all_finite(const Vector& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Matrix products. The accumulation kernel is register-tiled (6x8 output
// tiles, k innermost and sequential) so the hot loops run out of registers
// instead of bouncing partial sums through memory. k stays ascending for
// every output element, so results are bit-identical to the naive triple
// loop and reproducible across runs.

namespace detail {

inline constexpr std::size_t kTileRows = 6;
inline constexpr std::size_t kTileCols = 8;

// Full 6x8 tile: out(i0.., j0..) += a(i0.., :) * b(:, j0..); the selector
// lets the same kernel serve the plain and the a-transposed product. Written
// with 4-wide vector types so the accumulator tile stays pinned in vector
// registers; per output element the k summation is ascending, same as the
// scalar edge path.
typedef double Vec4 __attribute__((vector_size(32)));

template <bool TransposeA>
inline void product_tile_full(double* __restrict out, std::size_t out_stride,
                              const double* __restrict a, std::size_t a_stride,
                              const double* __restrict b, std::size_t b_stride,
                              std::size_t depth) {
  Vec4 acc[kTileRows][2] = {};
  for (std::size_t k = 0; k < depth; ++k) {
    const double* b_row = b + k * b_stride;
    Vec4 b_lo, b_hi;
    __builtin_memcpy(&b_lo, b_row, sizeof(Vec4));
    __builtin_memcpy(&b_hi, b_row + 4, sizeof(Vec4));
#pragma GCC unroll 8
    for (std::size_t ii = 0; ii < kTileRows; ++ii) {
      const double s = TransposeA ? a[k * a_stride + ii] : a[ii * a_stride + k];
      const Vec4 av = {s, s, s, s};
      acc[ii][0] += av * b_lo;
      acc[ii][1] += av * b_hi;
    }
  }
  for (std::size_t ii = 0; ii < kTileRows; ++ii) {
    double* o = out + ii * out_stride;
    for (std::size_t jj = 0; jj < 4; ++jj) {
      o[jj] += acc[ii][0][jj];
      o[jj + 4] += acc[ii][1][jj];
    }
  }
}

// Ragged edges; k stays ascending per output element, matching the full tile.
template <bool TransposeA>
inline void product_tile_edge(double* out, std::size_t out_stride, const double* a,
                              std::size_t a_stride, const double* b, std::size_t b_stride,
                              std::size_t depth, std::size_t rows, std::size_t cols) {
  for (std::size_t ii = 0; ii < rows; ++ii) {
    for (std::size_t jj = 0; jj < cols; ++jj) {
      double acc = 0.0;
      for (std::size_t k = 0; k < depth; ++k) {
        const double aik = TransposeA ? a[k * a_stride + ii] : a[ii * a_stride + k];
        acc += aik * b[k * b_stride + jj];
      }
      out[ii * out_stride + jj] += acc;
    }
  }
}

template <bool TransposeA>
inline void accumulate_product(Matrix& out, const Matrix& a, const Matrix& b,
                               std::size_t m, std::size_t depth, std::size_t n) {
  for (std::size_t i0 = 0; i0 < m; i0 += kTileRows) {
    const std::size_t rows = std::min(kTileRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kTileCols) {
      const std::size_t cols = std::min(kTileCols, n - j0);
      double* out_ptr = out.data.data() + i0 * out.cols + j0;
      const double* a_ptr = a.data.data() + (TransposeA ? i0 : i0 * a.cols);
      const double* b_ptr = b.data.data() + j0;
      if (rows == kTileRows && cols == kTileCols)
        product_tile_full<TransposeA>(out_ptr, out.cols, a_ptr, a.cols, b_ptr, b.cols, depth);
      else
        product_tile_edge<TransposeA>(out_ptr, out.cols, a_ptr, a.cols, b_ptr, b.cols, depth,
                                      rows, cols);
    }
  }
}

}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " times " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Matrix out(a.rows, b.cols);
  detail::accumulate_product<false>(out, a, b, a.rows, a.cols, b.cols);
  return out;
}

// out = a * b, reusing out's storage when the shape already matches
inline void product_into(Matrix& out, const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("product_into: incompatible shapes");
  if (out.rows != a.rows || out.cols != b.cols) {
    out = Matrix(a.rows, b.cols);
  } else {
    std::fill(out.data.begin(), out.data.end(), 0.0);
  }
  detail::accumulate_product<false>(out, a, b, a.rows, a.cols, b.cols);
}

// out += a * b
inline void add_product(Matrix& out, const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows || out.rows != a.rows || out.cols != b.cols) {
    throw ShapeError("add_product: incompatible shapes");
  }
  detail::accumulate_product<false>(out, a, b, a.rows, a.cols, b.cols);
}

// out += transpose(a) * b; a is batch x m, b is batch x n, out is m x n.
inline void add_product_at_b(Matrix& out, const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols) {
    throw ShapeError("add_product_at_b: incompatible shapes");
  }
  detail::accumulate_product<true>(out, a, b, a.cols, a.rows, b.cols);
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

// Adds v to every row of m.
inline void add_row_vector(Matrix& m, const Vector& v) {
  if (v.size() != m.cols) throw ShapeError("add_row_vector: length mismatch");
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* row = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) row[j] += v[j];
  }
}

inline Vector column_sums(const Matrix& m) {
  Vector out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += row[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scalar nonlinearities.

// Branches on sign so exp never overflows; exact 0/1 endpoints are only
// reached when the true value is within one ulp of them.
inline double sigmoid(double s) {
  if (s >= 0.0) {
    return 1.0 / (1.0 + std::exp(-s));
  }
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline double tanh(double s) { return std::tanh(s); }

inline double log_sum_exp(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(x[i] - m);
  return m + std::log(acc);
}

// Max-subtracted softmax; invariant under adding a constant to all inputs.
inline Vector softmax(const Vector& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  const double lse = log_sum_exp(v.data(), v.size());
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i] - lse);
  return out;
}

// ---------------------------------------------------------------------------
// Symmetric positive definite solve via Cholesky. Only used for the small
// kernel ridge systems (D of order tens), so a direct dense factorization.

inline Vector solve_spd(const Matrix& k, const Vector& rhs) {
  if (k.rows != k.cols) throw ShapeError("solve_spd: matrix not square");
  if (rhs.size() != k.rows) throw ShapeError("solve_spd: rhs length mismatch");
  const std::size_t n = k.rows;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(k(i, j) - k(j, i)) > 1e-10)
        throw std::invalid_argument("solve_spd: matrix not symmetric");

  // In-place lower Cholesky on a copy.
  Matrix l = k;
  for (std::size_t j = 0; j < n; ++j) {
    double diag = l(j, j);
    for (std::size_t p = 0; p < j; ++p) diag -= l(j, p) * l(j, p);
    if (!(diag > 0.0) || !std::isfinite(diag)) {
      throw NumericalError("solve_spd: matrix not positive definite (pivot " +
                           std::to_string(j) + ")");
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = l(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  // Forward then backward substitution.
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = rhs[i];
    for (std::size_t p = 0; p < i; ++p) s -= l(i, p) * y[p];
    y[i] = s / l(i, i);
  }
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t p = ii + 1; p < n; ++p) s -= l(p, ii) * x[p];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Rng: xoshiro256** seeded through splitmix64. Owned and explicit so runs
// reproduce across platforms; split() derives an independent stream for
// concurrent use (single owner per stream).

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; uses its own transcendentals rather than
  // std::normal_distribution so sequences match across standard libraries.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t v = next_u64();
      if (v >= threshold) return v % n;
    }
  }

  // Independent child stream; advances this generator by one draw.
  Rng split() {
    std::uint64_t x = next_u64();
    return Rng(splitmix64(x));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_[4];
  std::uint64_t seed_;
};

// Fisher-Yates.
template <typename T>
inline void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace kafgru
