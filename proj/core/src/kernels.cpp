#include "tba/kernels.hpp"

#include <algorithm>

#include "tba/error.hpp"
#include "tba/linalg.hpp"

namespace tba {

Tensor gelu(const Tensor& x, GeluVariant variant) {
  Tensor out = x;
  for (auto& v : out.values()) v = gelu(v, variant);
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.values()) v = silu(v);
  return out;
}

Tensor softmax(const Tensor& x) {
  Tensor out = x;
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.row(r);
    const float mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    std::vector<double> e(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      e[j] = std::exp(static_cast<double>(row[j]) - mx);
      sum += e[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] = static_cast<float>(e[j] / sum);
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.cols();
  if (x.rank() == 0 || d == 0) throw DimensionError("layernorm: last dimension is zero");
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layernorm: gamma/beta length " + std::to_string(gamma.numel()) +
                         " does not match feature dimension " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw ArgumentError("layernorm: eps must be positive");
  Tensor out(x.shape());
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = static_cast<float>((in[j] - mean) * inv * gamma[j] + beta[j]);
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (!b.empty()) {
    if (b.numel() != y.cols()) {
      throw DimensionError("linear: bias length " + std::to_string(b.numel()) + " vs output " +
                           std::to_string(y.cols()));
    }
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    }
  }
  return y;
}

}  // namespace tba
