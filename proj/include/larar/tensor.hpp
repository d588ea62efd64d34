#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace larar {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Dense row-major matrix of doubles. Scalars are 1x1, vectors are n x 1 or
// 1 x n. Every tensor the engine hands out is a value: copying it copies the
// buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);
  Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::span<const double> v);

  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  std::size_t size() const noexcept { return values_.size(); }
  const Shape& shape() const noexcept { return shape_; }
  bool empty() const noexcept { return values_.empty(); }

  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  // Value of a 1x1 tensor.
  double item() const;

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * shape_.cols, shape_.cols);
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(values_).subspan(r * shape_.cols, shape_.cols);
  }

  bool all_finite() const noexcept;

  // Rows [first, first + count).
  Tensor slice_rows(std::size_t first, std::size_t count) const;
  Tensor gather_rows(std::span<const std::size_t> indices) const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Bitwise comparison: distinguishes -0.0 from 0.0 and treats identical NaN
// payloads as equal.
bool bit_equal(const Tensor& a, const Tensor& b) noexcept;

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace larar
