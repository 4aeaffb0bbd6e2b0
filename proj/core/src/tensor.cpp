#include "tba/tensor.hpp"

#include <cmath>
#include <sstream>

#include "tba/error.hpp"

namespace tba {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_.back() == 0 ? 0 : data_.size() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

std::span<float> Tensor::row(std::size_t r) {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

std::span<const float> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) throw DimensionError("slice_rows out of range");
  const auto c = cols();
  std::vector<float> out(data_.begin() + begin * c, data_.begin() + end * c);
  return Tensor({end - begin, c}, std::move(out));
}

Tensor Tensor::transposed() const {
  if (rank() != 2) throw DimensionError("transpose needs a 2-D tensor, got " + shape_str(shape_));
  const auto r = shape_[0], c = shape_[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = at(i, j);
  return out;
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}
}  // namespace

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

double squared_norm(const Tensor& a) {
  double s = 0.0;
  for (float v : a.values()) s += static_cast<double>(v) * v;
  return s;
}

double frobenius_norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(const Tensor& a, float s) {
  Tensor out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError(what + " contains non-finite values");
}

}  // namespace tba
