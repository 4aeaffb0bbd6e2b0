#pragma once

#include <cmath>
#include <numbers>

#include "tba/tensor.hpp"

namespace tba {

enum class GeluVariant { kTanh, kErf };

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
// The erf form is x * Phi(x). Both are odd-symmetric in the sense
// gelu(x) - gelu(-x) == x, which the synthetic plants rely on.
template <typename T>
T gelu(T x, GeluVariant variant = GeluVariant::kTanh) {
  if (variant == GeluVariant::kErf) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  }
  const T k = std::sqrt(T(2) / std::numbers::pi_v<T>);
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x, GeluVariant variant = GeluVariant::kTanh) {
  if (variant == GeluVariant::kErf) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + x * pdf;
  }
  const T k = std::sqrt(T(2) / std::numbers::pi_v<T>);
  const T inner = k * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = k * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
T silu(T x) {
  return x * sigmoid(x);
}

template <typename T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

Tensor gelu(const Tensor& x, GeluVariant variant = GeluVariant::kTanh);
Tensor silu(const Tensor& x);
// Row-wise softmax over the last dimension, max-subtracted.
Tensor softmax(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-6;

// Per-row normalization over the last dimension followed by gamma * . + beta.
// Mean and variance (biased) are computed in double.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = kLayerNormEps);

// x * w + b for x [n x in], w [in x out], b [out] (b may be empty).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace tba
