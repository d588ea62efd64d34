#include "larar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "larar/errors.hpp"

namespace larar {

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, values_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape_{rows, cols}, values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError("tensor: " + std::to_string(values_.size()) + " values do not fill shape " +
                     to_string(shape_));
  }
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
    : Tensor(rows, cols, std::vector<double>(values)) {}

Tensor Tensor::column(std::span<const double> v) {
  return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t first, std::size_t count) const {
  if (first + count > rows()) {
    throw ShapeError("slice_rows: range exceeds " + to_string(shape_));
  }
  auto begin = values_.begin() + static_cast<std::ptrdiff_t>(first * cols());
  return Tensor(count, cols(),
                std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(count * cols())));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  Tensor out(indices.size(), cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols()), cols(),
                out.values_.begin() + static_cast<std::ptrdiff_t>(i * cols()));
  }
  return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 ||
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace larar
