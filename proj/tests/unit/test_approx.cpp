#include <gtest/gtest.h>

#include "tba/approx.hpp"
#include "tba/container.hpp"
#include "tba/error.hpp"
#include "unit/test_util.hpp"

namespace tba {
namespace {

using test::random_model;
using test::random_tensor;
using test::tiny_config;

Dataset random_dataset(std::size_t n, const ModelConfig& cfg, std::uint64_t seed) {
  Dataset ds;
  ds.name = "rand";
  Rng rng(seed);
  ds.images = random_tensor({n, cfg.image_size, cfg.image_size, cfg.channels}, rng);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(i % 2));
  ds.num_classes = 2;
  ds.normalization = Normalization::identity(cfg.channels);
  return ds;
}

TEST(Span, CommandLineNotationIsZeroBased) {
  EXPECT_EQ(parse_span("3:4"), (Span{4, 5}));
  EXPECT_EQ(parse_span("0:1"), (Span{1, 2}));
  EXPECT_EQ(format_span({4, 5}), "3:4");
  for (const char* bad : {"3", "a:4", "3:", ":4", "3:4:5", "-1:2", "3 :4"}) {
    EXPECT_THROW(parse_span(bad), ArgumentError) << bad;
  }
}

TEST(Span, RangeCheck) {
  EXPECT_NO_THROW(check_span({1, 4}, 4));
  EXPECT_THROW(check_span({0, 2}, 4), PlanError);
  EXPECT_THROW(check_span({3, 3}, 4), PlanError);
  EXPECT_THROW(check_span({3, 5}, 4), PlanError);
}

// Random span lists; a plan is valid iff every span is in range and each
// span ends strictly before the next one starts.
TEST(Plan, ValidationMatchesOrderingRule) {
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t b = 2 + rng.below(10);
    const std::size_t n = rng.below(4);
    std::vector<Span> spans;
    for (std::size_t i = 0; i < n; ++i) spans.push_back({rng.below(b + 1), rng.below(b + 2)});
    bool valid = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (spans[i].s < 1 || spans[i].e <= spans[i].s || spans[i].e > b) valid = false;
      if (i > 0 && spans[i - 1].e >= spans[i].s) valid = false;
    }
    const ApproxPlan plan = make_skip_plan(spans);
    if (valid) {
      EXPECT_NO_THROW(plan.validate(b, 16));
    } else {
      EXPECT_THROW(plan.validate(b, 16), PlanError);
    }
  }
}

TEST(Plan, AdjacentSharedEndpointIsRejected) {
  EXPECT_THROW(make_skip_plan({{1, 3}, {3, 4}}).validate(6, 4), PlanError);
  EXPECT_NO_THROW(make_skip_plan({{1, 3}, {4, 5}}).validate(6, 4));
}

TEST(Plan, WidthMismatchIsRejected) {
  LinearMap m;
  m.t = Tensor::identity(8);
  ApproxPlan plan;
  plan.add({1, 2}, m);
  EXPECT_THROW(plan.validate(4, 16), PlanError);
  const TransformerModel host(tiny_config(4, 16));
  EXPECT_THROW(PatchedModel(host, plan), PlanError);
}

TEST(Patched, EmptyPlanIsBitwiseIdentical) {
  const TransformerModel m = random_model(tiny_config(4), 2);
  const PatchedModel p(m, {});
  Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    const Tensor img = random_tensor({8, 8, 3}, rng);
    EXPECT_EQ(p.forward(img), m.forward(img));
  }
}

TEST(Patched, AppliesMapsInPlaceOfSpans) {
  const TransformerModel m = random_model(tiny_config(6), 4);
  Rng rng(5);
  LinearMap a;
  a.t = random_tensor({16, 16}, rng, 0.2);
  LinearMap b;
  b.t = random_tensor({16, 16}, rng, 0.2);
  b.bias = random_tensor({16}, rng);
  ApproxPlan plan;
  plan.add({1, 3}, a);
  plan.add({4, 6}, b);
  const PatchedModel p(m, plan);
  const Tensor img = random_tensor({8, 8, 3}, rng);
  Tensor x = m.embed(img);
  x = m.block_forward(0, x);
  x = a.apply(x);
  x = m.block_forward(3, x);
  x = b.apply(x);
  std::vector<std::size_t> seen;
  EXPECT_EQ(p.forward_hidden(img, [&](std::size_t k, const Tensor&) { seen.push_back(k); }), x);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 3, 4, 6}));
}

TEST(Patched, IdentitySkipEqualsModelWithoutTheBlocks) {
  const ModelConfig cfg = tiny_config(4);
  const TransformerModel m = random_model(cfg, 7);
  ModelConfig short_cfg = cfg;
  short_cfg.num_blocks = 2;
  TransformerModel shorter(short_cfg);
  // Keep blocks 0 and 3 of the host.
  for (auto& [name, t] : shorter.named_weights()) {
    std::string src = name;
    if (name.rfind("blocks.1.", 0) == 0) src = "blocks.3." + name.substr(9);
    for (const auto& [hname, ht] : m.named_weights())
      if (hname == src) *t = *ht;
  }
  const PatchedModel p(m, make_skip_plan({{1, 3}}));
  Rng rng(1);
  const Tensor img = random_tensor({8, 8, 3}, rng);
  EXPECT_EQ(p.forward(img), shorter.forward(img));
  EXPECT_EQ(count_params(p), count_params(shorter));
}

TEST(ParamCount, PatchedModelAccounting) {
  const TransformerModel m(tiny_config(4, 16));
  LinearMap map;
  map.t = Tensor::identity(16);
  map.bias = Tensor({16});
  ApproxPlan plan;
  plan.add({1, 3}, map);
  const PatchedModel p(m, plan);
  EXPECT_EQ(count_params(p), count_params(m) - 2 * count_block_params(m.config()) + 16 * 16 + 16);
  EXPECT_EQ(approximator_param_count("identity", 16), 0u);
  EXPECT_EQ(approximator_param_count("linear", 16), 256u);
  EXPECT_EQ(approximator_param_count("mlp", 16), 16u * 8 + 8 + 8 * 16 + 16);
  EXPECT_EQ(approximator_param_count("resmlp", 16), 2u * (256 + 16) + 64);
  EXPECT_THROW(approximator_param_count("svm", 16), ArgumentError);
}

TEST(FitLinear, RecoversKnownMaps) {
  Rng rng(8);
  const Tensor xs = random_tensor({200, 6}, rng);
  const Tensor t0 = random_tensor({6, 4}, rng);
  Tensor xe({200, 4});
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 6; ++k) s += double(xs.at(i, k)) * t0.at(k, j);
      xe.at(i, j) = static_cast<float>(s);
    }
  const LinearMap m = fit_linear(xs, xe);
  EXPECT_LT(max_abs_diff(m.t, t0), 1e-5);
  EXPECT_EQ(m.rank, 6u);
  EXPECT_EQ(m.rows, 200u);
  EXPECT_LT(m.residual, 1e-9);
  EXPECT_FALSE(m.has_bias());

  Tensor shifted = xe;
  for (std::size_t i = 0; i < 200; ++i) shifted.at(i, 2) += 3.0f;
  const LinearMap mb = fit_linear(xs, shifted, true);
  EXPECT_TRUE(mb.has_bias());
  EXPECT_NEAR(mb.bias[2], 3.0, 1e-5);
  EXPECT_NEAR(mb.bias[0], 0.0, 1e-5);
  EXPECT_LT(max_abs_diff(mb.t, t0), 1e-5);
  EXPECT_EQ(mb.param_count(), 28u);
}

TEST(FitLinear, ResidualDefinitions) {
  Rng rng(9);
  const Tensor xs = random_tensor({50, 3}, rng), xe = random_tensor({50, 3}, rng);
  const LinearMap m = fit_linear(xs, xe);
  const double total = residual_total(xs, xe, m.apply(xs));
  EXPECT_NEAR(m.residual_total, total, 1e-6 * total);
  EXPECT_NEAR(m.residual, total / 50, 1e-6 * total);
  // Least squares never does worse than the identity.
  EXPECT_LE(m.residual_total, residual_total(xs, xe, xs) + 1e-9);
}

TEST(FitLinear, RowPermutationInvariance) {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor xs = random_tensor({80, 5}, rng), xe = random_tensor({80, 5}, rng);
    std::vector<std::size_t> perm(80);
    for (std::size_t i = 0; i < 80; ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    Tensor ps({80, 5}), pe({80, 5});
    for (std::size_t i = 0; i < 80; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        ps.at(i, j) = xs.at(perm[i], j);
        pe.at(i, j) = xe.at(perm[i], j);
      }
    EXPECT_LT(max_abs_diff(fit_linear(xs, xe).t, fit_linear(ps, pe).t), 1e-5);
  }
}

TEST(FitLinear, NeedsPerTokenActivations) {
  ActivationSet acts;
  acts.reduce = Reduce::kMean;
  acts.num_blocks = 2;
  acts.blocks[1] = Tensor({3, 2});
  acts.blocks[2] = Tensor({3, 2});
  EXPECT_THROW(fit_linear(acts, {1, 2}), ArgumentError);
  EXPECT_THROW(fit_linear(Tensor({3, 2}), Tensor({4, 2})), DimensionError);
}

TEST(Persistence, LinearMapRoundTripKeepsMetadata) {
  Rng rng(11);
  LinearMap m = fit_linear(random_tensor({30, 4}, rng), random_tensor({30, 4}, rng), true);
  m.span = {2, 4};
  m.source_fingerprint = "abc";
  const auto bytes = encode_container(approximator_to_container(m, m.span));
  const StoredApproximator back = approximator_from_container(decode_container(bytes));
  EXPECT_EQ(back.span, (Span{2, 4}));
  EXPECT_EQ(back.approx.kind(), "linear");
  ASSERT_NE(back.approx.linear(), nullptr);
  EXPECT_EQ(back.approx.linear()->t, m.t);
  EXPECT_EQ(back.approx.linear()->bias, m.bias);
  EXPECT_EQ(back.meta["source_fingerprint"], "abc");
  EXPECT_EQ(back.meta["rank"], m.rank);
  EXPECT_EQ(encode_container(approximator_to_container(back.approx, back.span)), bytes);

  const auto id = approximator_from_container(approximator_to_container(IdentityMap{}, {1, 2}));
  EXPECT_EQ(id.approx.kind(), "identity");
  Container bad = approximator_to_container(m, m.span);
  bad.documents["__meta__"]["kind"] = "quadratic";
  EXPECT_THROW(approximator_from_container(bad), HeaderError);
  Container wrong = approximator_to_container(m, m.span);
  wrong.tensors["bias"] = Tensor({7});
  EXPECT_THROW(approximator_from_container(wrong), ShapeMismatchError);
}

TEST(Features, OneRowPerSampleAndZeroDriftForEmptyPlan) {
  const ModelConfig cfg = tiny_config(3);
  const TransformerModel m = random_model(cfg, 12);
  const Dataset ds = random_dataset(6, cfg, 13);
  const DataSubset sub = full_subset(ds);
  FeatureOptions opt;
  const Tensor f = extract_features(m, ds, sub, opt);
  EXPECT_EQ(f.shape(), (Shape{6, cfg.d_model}));
  EXPECT_EQ(f.row(2)[1], m.forward(ds.image(2)).at(0, 1));
  const PatchedModel same(m, {});
  EXPECT_EQ(extract_features(same, ds, sub, opt), f);
  EXPECT_EQ(final_layer_drift(m, same, ds, sub, {}), 0.0);
  opt.reduce = Reduce::kAll;
  EXPECT_THROW(extract_features(m, ds, sub, opt), ArgumentError);
  const PatchedModel skip(m, make_skip_plan({{1, 3}}));
  EXPECT_GT(final_layer_drift(m, skip, ds, sub, {}), 0.0);
}

}  // namespace
}  // namespace tba
