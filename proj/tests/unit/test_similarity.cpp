#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "tba/error.hpp"
#include "tba/similarity.hpp"
#include "unit/test_util.hpp"

namespace tba {
namespace {

using test::random_tensor;

ActivationSet make_set(std::vector<Tensor> blocks) {
  ActivationSet a;
  a.num_blocks = blocks.size();
  for (std::size_t k = 0; k < blocks.size(); ++k) a.blocks[k + 1] = std::move(blocks[k]);
  return a;
}

Tensor random_orthogonal(std::size_t d, Rng& rng) {
  // Gram-Schmidt on a Gaussian matrix.
  std::vector<std::vector<double>> q;
  while (q.size() < d) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    for (const auto& u : q) {
      double dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
    }
    double n = 0;
    for (double x : v) n += x * x;
    for (auto& x : v) x /= std::sqrt(n);
    q.push_back(v);
  }
  Tensor r({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) r.at(i, j) = static_cast<float>(q[j][i]);
  return r;
}

TEST(Mse, HandExample) {
  const Tensor xs = Tensor::from_rows({{0, 0}, {1, 1}});
  const Tensor xe = Tensor::from_rows({{1, 0}, {1, 3}});
  EXPECT_DOUBLE_EQ(mse(xs, xe), 2.5);
  EXPECT_THROW(mse(xs, Tensor({3, 2})), DimensionError);
}

TEST(Mse, MatchesNaiveLoopAndMatrixInvariants) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng.below(5), n = 2 + rng.below(30), d = 1 + rng.below(12);
    std::vector<Tensor> blocks;
    for (std::size_t k = 0; k < b; ++k) blocks.push_back(random_tensor({n, d}, rng, 1 + k));
    const ActivationSet acts = make_set(blocks);
    const SimilarityMatrix m = similarity_matrix(acts, Metric::kMse);
    for (std::size_t s = 1; s <= b; ++s) {
      EXPECT_EQ(m.at(s, s), 0.0);
      for (std::size_t e = 1; e <= b; ++e) {
        double total = 0;
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            const double diff = double(blocks[s - 1].at(r, c)) - blocks[e - 1].at(r, c);
            total += diff * diff;
          }
        const double naive = total / n;
        EXPECT_NEAR(m.at(s, e), naive, 1e-5 * std::max(1.0, naive));
        EXPECT_EQ(m.at(s, e), m.at(e, s));
        EXPECT_GE(m.at(s, e), 0.0);
      }
    }
  }
}

TEST(Cosine, HandExampleAndZeroRows) {
  EXPECT_DOUBLE_EQ(cosine(Tensor::from_rows({{1, 0}, {1, 0}}), Tensor::from_rows({{0, 1}, {1, 0}})), 0.5);
  EXPECT_DOUBLE_EQ(cosine(Tensor::from_rows({{0, 0}, {2, 0}}), Tensor::from_rows({{1, 1}, {3, 0}})), 0.5);
}

TEST(Cosine, MatrixDiagonalAndRange) {
  Rng rng(2);
  const ActivationSet acts = make_set({random_tensor({10, 4}, rng), random_tensor({10, 4}, rng)});
  const SimilarityMatrix m = similarity_matrix(acts, Metric::kCosine);
  EXPECT_NEAR(m.at(1, 1), 1.0, 1e-6);
  EXPECT_LE(std::abs(m.at(1, 2)), 1.0);
  EXPECT_EQ(m.at(1, 2), m.at(2, 1));
}

TEST(Cka, IdentityOrthogonalAndScaleInvariance) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({200, 8}, rng);
    EXPECT_NEAR(cka(x, x).value, 1.0, 1e-6);
    const Tensor r = random_orthogonal(8, rng);
    Tensor y({200, 8});
    for (std::size_t i = 0; i < 200; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 8; ++k) s += double(x.at(i, k)) * r.at(k, j);
        y.at(i, j) = static_cast<float>(s);
      }
    EXPECT_NEAR(cka(x, y).value, 1.0, 1e-5);
    EXPECT_NEAR(cka(x, x * 3.5f).value, 1.0, 1e-5);
  }
}

TEST(Cka, IndependentInputsScoreLow) {
  Rng rng(6);
  const CkaValue v = cka(random_tensor({2000, 8}, rng), random_tensor({2000, 8}, rng));
  EXPECT_FALSE(v.degenerate);
  EXPECT_LT(v.value, 0.1);
}

TEST(Cka, ConstantInputIsDegenerate) {
  Rng rng(7);
  const CkaValue v = cka(Tensor({10, 3}, 2.0f), random_tensor({10, 3}, rng));
  EXPECT_TRUE(v.degenerate);
  EXPECT_EQ(v.value, 0.0);
  const ActivationSet acts = make_set({Tensor({10, 3}, 2.0f), random_tensor({10, 3}, rng)});
  EXPECT_FALSE(similarity_matrix(acts, Metric::kCka).degenerate_pairs.empty());
}

TEST(Similarity, TwoBlockMatrixByHand) {
  const ActivationSet acts =
      make_set({Tensor::from_rows({{0, 0}, {1, 1}}), Tensor::from_rows({{1, 0}, {1, 3}})});
  const SimilarityMatrix m = similarity_matrix(acts, Metric::kMse);
  EXPECT_EQ(m.values.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(m.at(1, 2), 2.5);
  EXPECT_DOUBLE_EQ(m.at(2, 1), 2.5);
}

TEST(Similarity, ParseAndDirection) {
  EXPECT_EQ(parse_metric("cka"), Metric::kCka);
  EXPECT_THROW(parse_metric("l2"), ArgumentError);
  EXPECT_TRUE(lower_is_better(Metric::kMse));
  EXPECT_FALSE(lower_is_better(Metric::kCosine));
}

SimilarityMatrix crafted_matrix(Metric metric, std::size_t b, const std::vector<double>& upper) {
  SimilarityMatrix m;
  m.metric = metric;
  m.num_blocks = b;
  m.values = Tensor({b, b});
  std::size_t i = 0;
  for (std::size_t s = 1; s <= b; ++s)
    for (std::size_t e = s + 1; e <= b; ++e) {
      m.values.at(s - 1, e - 1) = m.values.at(e - 1, s - 1) = static_cast<float>(upper[i++]);
    }
  return m;
}

TEST(RankSpans, TieBreaksOnSavingsThenStart) {
  // B = 4; pairs (1,2) (1,3) (1,4) (2,3) (2,4) (3,4).
  const auto m = crafted_matrix(Metric::kMse, 4, {1, 1, 5, 1, 0.5, 1});
  const std::vector<std::uint64_t> params = {10, 20, 30, 40};
  const auto c = rank_spans(m, 3, 10, params, 5);
  ASSERT_EQ(c.size(), 6u);
  EXPECT_EQ(c[0], (SpanCandidate{2, 4, 0.5, 65}));
  // Score 1 ties: (1,3) saves 45, (2,3) 25, (3,4) 35, (1,2) 15.
  EXPECT_EQ(c[1].s, 1u);
  EXPECT_EQ(c[1].e, 3u);
  EXPECT_EQ(c[2].s, 3u);
  EXPECT_EQ(c[3].s, 2u);
  EXPECT_EQ(c[4].e, 2u);
  EXPECT_EQ(c[5].e, 4u);
  EXPECT_EQ(c[5].s, 1u);
}

TEST(RankSpans, EqualSavingsFallBackToSmallerStart) {
  const auto m = crafted_matrix(Metric::kCka, 3, {0.9, 0.2, 0.9});
  const auto c = rank_spans(m, 1, 10, {4, 4, 4}, 0);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].s, 1u);
  EXPECT_EQ(c[1].s, 2u);
}

TEST(RankSpans, OrderIsTotalAndConsistent) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 2 + rng.below(6);
    std::vector<double> upper;
    for (std::size_t i = 0; i < b * (b - 1) / 2; ++i) upper.push_back(static_cast<double>(rng.below(3)));
    std::vector<std::uint64_t> params;
    for (std::size_t k = 0; k < b; ++k) params.push_back(rng.below(3) * 10);
    const auto metric = trial % 2 ? Metric::kMse : Metric::kCosine;
    const auto c = rank_spans(crafted_matrix(metric, b, upper), b, 100, params, 0);
    EXPECT_EQ(c.size(), b * (b - 1) / 2);
    for (std::size_t i = 1; i < c.size(); ++i) {
      const auto& p = c[i - 1];
      const auto& q = c[i];
      const bool better_score = lower_is_better(metric) ? p.score < q.score : p.score > q.score;
      const bool key_ok =
          better_score ||
          (p.score == q.score &&
           (p.params_saved > q.params_saved ||
            (p.params_saved == q.params_saved && (p.s < q.s || (p.s == q.s && p.e < q.e)))));
      EXPECT_TRUE(key_ok) << "position " << i;
    }
  }
}

TEST(RankSpans, LimitsAndTopK) {
  const auto m = crafted_matrix(Metric::kMse, 4, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(rank_spans(m, 1, 100, {1, 1, 1, 1}, 0).size(), 3u);
  EXPECT_EQ(rank_spans(m, 3, 2, {1, 1, 1, 1}, 0).size(), 2u);
  EXPECT_EQ(span_params_saved({10, 20, 30}, 1, 3, 15), 35u);
  EXPECT_EQ(span_params_saved({10, 20, 30}, 1, 2, 50), 0u);
}

TEST(SimilarityCsv, SparseAndDenseLayouts) {
  test::TempDir dir("sim");
  const auto m = crafted_matrix(Metric::kMse, 2, {2.5});
  write_similarity_csv(m, dir / "sim.csv");
  write_similarity_dense_csv(m, dir / "dense.csv");
  std::ifstream a(dir / "sim.csv"), b(dir / "dense.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), "s,e,value\n1,1,0\n1,2,2.5\n2,1,2.5\n2,2,0\n");
  EXPECT_EQ(sb.str(), "0,2.5\n2.5,0\n");
}

}  // namespace
}  // namespace tba
