#include <gtest/gtest.h>

#include <cmath>

#include "tba/error.hpp"
#include "tba/kernels.hpp"
#include "unit/test_util.hpp"

namespace tba {
namespace {

TEST(Layernorm, CentersAndScales) {
  const Tensor x = Tensor::from_rows({{1, 3}});
  const Tensor y = layernorm(x, Tensor::vector({1, 1}), Tensor::vector({0, 0}), 1e-12);
  EXPECT_NEAR(y.at(0, 0), -1.0, 1e-6);
  EXPECT_NEAR(y.at(0, 1), 1.0, 1e-6);
}

TEST(Layernorm, GainBiasAndEps) {
  const Tensor x = Tensor::from_rows({{1, 3}, {5, 5}});
  const Tensor y = layernorm(x, Tensor::vector({2, 3}), Tensor::vector({1, -1}), 1.0);
  // var 1, eps 1 -> divide by sqrt(2)
  EXPECT_NEAR(y.at(0, 0), 1 - 2 / std::sqrt(2.0), 1e-6);
  EXPECT_NEAR(y.at(0, 1), -1 + 3 / std::sqrt(2.0), 1e-6);
  // constant row normalizes to the bias
  EXPECT_NEAR(y.at(1, 0), 1.0, 1e-6);
  EXPECT_NEAR(y.at(1, 1), -1.0, 1e-6);
}

TEST(Layernorm, BadArgumentsThrow) {
  const Tensor x({2, 3});
  EXPECT_THROW(layernorm(x, Tensor({2}), Tensor({3})), DimensionError);
  EXPECT_THROW(layernorm(x, Tensor({3}), Tensor({3}), 0.0), ArgumentError);
}

TEST(Gelu, KnownValues) {
  EXPECT_NEAR(gelu(1.0), 0.8411919906, 1e-9);
  EXPECT_NEAR(gelu(-1.0), -0.1588080094, 1e-9);
  EXPECT_NEAR(gelu(1.0, GeluVariant::kErf), 0.8413447461, 1e-9);
  EXPECT_EQ(gelu(0.0), 0.0);
}

TEST(Gelu, OddPartIsIdentity) {
  for (double x = -6; x <= 6; x += 0.37) {
    EXPECT_NEAR(gelu(x) - gelu(-x), x, 1e-12);
    EXPECT_NEAR(gelu(x, GeluVariant::kErf) - gelu(-x, GeluVariant::kErf), x, 1e-12);
  }
}

TEST(Gelu, GradientMatchesFiniteDifference) {
  for (auto variant : {GeluVariant::kTanh, GeluVariant::kErf}) {
    for (double x = -4; x <= 4; x += 0.5) {
      const double h = 1e-6;
      const double fd = (gelu(x + h, variant) - gelu(x - h, variant)) / (2 * h);
      EXPECT_NEAR(gelu_grad(x, variant), fd, 1e-7);
    }
  }
}

TEST(Silu, ValuesAndGradient) {
  EXPECT_NEAR(silu(1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(silu(-40.0), -40.0 * std::exp(-40.0), 1e-20);
  for (double x = -4; x <= 4; x += 0.5) {
    const double h = 1e-6;
    EXPECT_NEAR(silu_grad(x), (silu(x + h) - silu(x - h)) / (2 * h), 1e-7);
  }
}

TEST(Softmax, RowsSumToOneAndResistOverflow) {
  const Tensor x = Tensor::from_rows({{1000, 1000, 999}, {0, 0, 0}});
  const Tensor y = softmax(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += y.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_NEAR(y.at(1, 0), 1.0 / 3, 1e-7);
  EXPECT_NEAR(y.at(0, 0) / y.at(0, 2), std::exp(1.0), 1e-4);
}

TEST(Linear, AffineMap) {
  const Tensor x = Tensor::from_rows({{1, 2}});
  const Tensor w = Tensor::from_rows({{1, 0, 2}, {0, 1, 3}});
  const Tensor y = linear(x, w, Tensor::vector({1, 1, 1}));
  EXPECT_EQ(y, Tensor::from_rows({{2, 3, 9}}));
  EXPECT_EQ(linear(x, w, Tensor()), Tensor::from_rows({{1, 2, 8}}));
  EXPECT_THROW(linear(x, w, Tensor::vector({1})), DimensionError);
}

}  // namespace
}  // namespace tba
