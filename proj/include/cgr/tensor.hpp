#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cgr/errors.hpp"

namespace cgr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles.
///
/// Every tensor the model touches is rank 1 or 2; the autodiff ops only
/// accept rank 2, so a row vector is stored as [1 x n].
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_volume(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_volume(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  // Builds a matrix from nested rows; all rows must have the same length.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("from_rows: empty input");
    const std::size_t cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

  double item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const = default;

 private:
  static void check_shape(const Shape& shape) {
    for (auto s : shape)
      if (s == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  void require_matrix() const {
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

// Register tile: o[R x C] += a[R x k] * b[k x C]. `a` is row-major with
// leading dimension lda, or stored transposed ([k x R], leading dimension
// lda) when ATrans; `b` and `o` are row-major.
template <bool ATrans, std::size_t R, std::size_t C>
inline void gemm_tile(std::size_t k, const double* __restrict a, std::size_t lda, const double* __restrict b,
                      std::size_t ldb, double* __restrict o, std::size_t ldo) {
  double acc[R][C] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* br = b + p * ldb;
#pragma GCC unroll 8
    for (std::size_t r = 0; r < R; ++r) {
      const double x = ATrans ? a[p * lda + r] : a[r * lda + p];
#pragma GCC unroll 8
      for (std::size_t c = 0; c < C; ++c) acc[r][c] += x * br[c];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) o[r * ldo + c] += acc[r][c];
}

template <bool ATrans, std::size_t Rows, std::size_t C>
inline void gemm_row_block(std::size_t i0, std::size_t m, std::size_t k, std::size_t n, const double* a,
                           const double* b, double* o) {
  const std::size_t lda = ATrans ? m : k;
  const double* ai = ATrans ? a + i0 : a + i0 * lda;
  double* oi = o + i0 * n;
  std::size_t j = 0;
  for (; j + C <= n; j += C) gemm_tile<ATrans, Rows, C>(k, ai, lda, b + j, n, oi + j, n);
  for (; j < n; ++j) gemm_tile<ATrans, Rows, 1>(k, ai, lda, b + j, n, oi + j, n);
}

template <bool ATrans>
inline void gemm_blocked(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* o) {
  constexpr std::size_t R = 4, C = 8;
  std::size_t i = 0;
  for (; i + R <= m; i += R) gemm_row_block<ATrans, R, C>(i, m, k, n, a, b, o);
  for (; i < m; ++i) gemm_row_block<ATrans, 1, C>(i, m, k, n, a, b, o);
}

}  // namespace detail

namespace detail {

// The tile kernel vectorises best with `a` stored transposed, so the other
// layouts pack into that form first; packing is O(mk) against O(mkn) work.
inline std::vector<double> transposed(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

}  // namespace detail

// out += a * b for row-major matrices; a is [m x k], b is [k x n].
inline void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const auto at = detail::transposed(a.data().data(), m, k);
  detail::gemm_blocked<true>(m, k, n, at.data(), b.data().data(), out.data().data());
}

// out += a^T * b; a is [k x m], b is [k x n].
inline void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  detail::gemm_blocked<true>(m, k, n, a.data().data(), b.data().data(), out.data().data());
}

// out += a * b^T; a is [m x k], b is [n x k].
inline void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const auto at = detail::transposed(a.data().data(), m, k);
  const auto bt = detail::transposed(b.data().data(), n, k);
  detail::gemm_blocked<true>(m, k, n, at.data(), bt.data(), out.data().data());
}

inline Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

inline Tensor random_uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

}  // namespace cgr
