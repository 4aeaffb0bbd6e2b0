#include <gtest/gtest.h>

#include "tba/error.hpp"
#include "tba/rng.hpp"
#include "tba/tensor.hpp"

namespace tba {
namespace {

TEST(Tensor, ShapeAndAccess) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.shape(), (Shape{2, 3}));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0f);
  EXPECT_EQ(t.transposed().at(2, 1), 6.0f);
  EXPECT_EQ(t.slice_rows(1, 2).at(0, 0), 4.0f);
}

TEST(Tensor, HigherRankFlattensLeadingDims) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rows(), 6u);
  EXPECT_EQ(t.cols(), 4u);
}

TEST(Tensor, BadDataLengthThrows) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), DimensionError);
  EXPECT_THROW(Tensor({2, 3}).reshaped({4, 2}), DimensionError);
}

TEST(Tensor, Arithmetic) {
  const Tensor a = Tensor::vector({1, 2});
  const Tensor b = Tensor::vector({3, -1});
  EXPECT_EQ(a + b, Tensor::vector({4, 1}));
  EXPECT_EQ(a - b, Tensor::vector({-2, 3}));
  EXPECT_EQ(a * 2.0f, Tensor::vector({2, 4}));
  EXPECT_DOUBLE_EQ(squared_norm(b), 10.0);
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 3.0);
  EXPECT_THROW(a + Tensor::vector({1}), DimensionError);
}

TEST(Tensor, RequireFinite) {
  Tensor t = Tensor::vector({1, 2});
  EXPECT_NO_THROW(require_finite(t, "t"));
  t[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(require_finite(t, "t"), NumericError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, ForkedStreamsAreIndependentOfParentDraws) {
  Rng fa = Rng(7).fork(3);
  EXPECT_EQ(fa.next_u64(), Rng(7).fork(3).next_u64());
  EXPECT_NE(Rng(7).fork(3).next_u64(), Rng(7).fork(4).next_u64());
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(1);
  double su = 0, sn = 0, sn2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.01);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}

TEST(Rng, BelowIsInRangeAndCoversAll) {
  Rng rng(5);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) seen[rng.below(7)]++;
  for (int c : seen) EXPECT_GT(c, 800);
}

TEST(Rng, SampleWithoutReplacementIsSortedAndDistinct) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto idx = sample_without_replacement(50, 20, rng);
    ASSERT_EQ(idx.size(), 20u);
    for (std::size_t i = 1; i < idx.size(); ++i) EXPECT_LT(idx[i - 1], idx[i]);
    EXPECT_LT(idx.back(), 50u);
  }
  Rng rng(0);
  const auto all = sample_without_replacement(10, 10, rng);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
}

// Independent xoshiro256** seeded by four SplitMix64 outputs.
std::vector<std::uint64_t> oracle_stream(std::uint64_t seed, int n) {
  auto mix = [](std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  std::uint64_t s[4];
  for (auto& v : s) v = mix(seed);
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(rotl(s[1] * 5, 7) * 9);
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
  }
  return out;
}

TEST(Rng, MatchesReferenceGenerator) {
  std::uint64_t state = 0;
  EXPECT_EQ(splitmix64(state), 0xe220a8397b1dcdafULL);
  for (std::uint64_t seed : {0ULL, 1ULL, 12345ULL}) {
    Rng rng(seed);
    for (std::uint64_t expected : oracle_stream(seed, 50)) EXPECT_EQ(rng.next_u64(), expected);
  }
}

}  // namespace
}  // namespace tba
