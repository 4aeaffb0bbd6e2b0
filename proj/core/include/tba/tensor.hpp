#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tba {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor identity(std::size_t n);
  // Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // 2-D accessors; rows() also works for higher ranks by flattening all
  // leading dimensions into rows (cols() is then the last dimension).
  std::size_t rows() const;
  std::size_t cols() const;

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  // Rows [begin, end) of the flattened 2-D view.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor transposed() const;

  bool all_finite() const noexcept;
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& a);
double squared_norm(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, float s);

// Throws NumericError naming `what` when any element is NaN or infinite.
void require_finite(const Tensor& t, const std::string& what);

}  // namespace tba
