#include <gtest/gtest.h>

#include <cmath>

#include "tba/approximators.hpp"
#include "tba/error.hpp"
#include "tba/kernels.hpp"
#include "unit/grad_check.hpp"
#include "unit/test_util.hpp"

namespace tba {
namespace {

using test::check_gradients;
using test::random_matrix;

void set_param(TrainableApprox& net, const std::string& name, std::vector<double> values) {
  for (auto& p : net.params())
    if (p.name == name) {
      ASSERT_EQ(p.values.size(), values.size()) << name;
      p.values = std::move(values);
      return;
    }
  FAIL() << "no parameter " << name;
}

TEST(MlpApprox, ShapesAndParamCount) {
  Rng rng(0);
  const MlpApprox net(8, 8, rng);
  EXPECT_EQ(net.hidden(), 4u);
  EXPECT_EQ(net.param_count(), 8u * 4 + 4 + 4 * 8 + 8);
  EXPECT_EQ(net.params()[0].name, "fc1.weight");
  EXPECT_EQ(net.params()[0].shape, (Shape{8, 4}));
}

TEST(MlpApprox, HandInstance) {
  Rng rng(0);
  MlpApprox net(2, 2, rng);
  set_param(net, "fc1.weight", {1, -1});  // [2 x 1]
  set_param(net, "fc1.bias", {0.5});
  set_param(net, "fc2.weight", {2, 0});  // [1 x 2]
  set_param(net, "fc2.bias", {0, 1});
  Matrix x(1, 2);
  x.v = {1, 3};
  const Matrix y = net.forward(x);
  const double z = 1 - 3 + 0.5;
  EXPECT_NEAR(y(0, 0), 2 * gelu(z), 1e-12);
  EXPECT_NEAR(y(0, 1), 1.0, 1e-12);
}

TEST(ResMlpApprox, HandInstance) {
  Rng rng(0);
  ResMlpApprox net(2, 0.0, rng);
  set_param(net, "norm1.gamma", {1, 1});
  set_param(net, "norm1.beta", {0, 0});
  set_param(net, "ff.0.weight", {1, 0, 0, 1});
  set_param(net, "ff.0.bias", {0, 0});
  set_param(net, "ff.3.weight", {1, 0, 0, 1});
  set_param(net, "ff.3.bias", {0, 0});
  set_param(net, "norm2.gamma", {2, 2});
  set_param(net, "norm2.beta", {0, 1});
  Matrix x(1, 2);
  x.v = {1, 3};
  const Matrix y = net.forward(x);
  const double eps = ResMlpApprox::kNormEps;
  const double a = 1 / std::sqrt(1 + eps);
  const double r0 = silu(-a) - a, r1 = silu(a) + a;
  const double mu = (r0 + r1) / 2, var = (r1 - r0) * (r1 - r0) / 4;
  EXPECT_NEAR(y(0, 0), 2 * (r0 - mu) / std::sqrt(var + eps), 1e-12);
  EXPECT_NEAR(y(0, 1), 2 * (r1 - mu) / std::sqrt(var + eps) + 1, 1e-12);
}

TEST(ResMlpApprox, ParamNamesAndValidation) {
  Rng rng(1);
  const ResMlpApprox net(4, 0.1, rng);
  std::vector<std::string> names;
  for (const auto& p : net.params()) names.push_back(p.name);
  EXPECT_EQ(names, (std::vector<std::string>{"norm1.gamma", "norm1.beta", "ff.0.weight", "ff.0.bias",
                                             "ff.3.weight", "ff.3.bias", "norm2.gamma", "norm2.beta"}));
  EXPECT_EQ(net.param_count(), 2u * (16 + 4) + 4 * 4);
  EXPECT_THROW(ResMlpApprox(4, 1.0, rng), ArgumentError);
}

TEST(GradientCheck, MlpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    MlpApprox net(6, 6, rng);
    const auto r = check_gradients(net, random_matrix(7, 6, rng), random_matrix(7, 6, rng));
    EXPECT_LT(r.max_rel_err, 1e-4) << "seed " << seed;
  }
}

TEST(GradientCheck, ResMlpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ResMlpApprox net(5, 0.3, rng);
    // Perturb the norm parameters away from their (1, 0) initial values.
    for (auto& p : net.params())
      for (auto& v : p.values) v += 0.3 * rng.normal();
    const auto r = check_gradients(net, random_matrix(6, 5, rng), random_matrix(6, 5, rng));
    EXPECT_LT(r.max_rel_err, 1e-4) << "seed " << seed;
  }
}

TEST(ResMlpApprox, DropoutOnlyDuringTraining) {
  Rng rng(2);
  const ResMlpApprox net(4, 0.5, rng);
  const Matrix x = random_matrix(10, 4, rng), y = random_matrix(10, 4, rng);
  const double clean = net.loss(x, y, nullptr, nullptr);
  Rng drop(3);
  EXPECT_NE(net.loss(x, y, nullptr, &drop), clean);
  EXPECT_EQ(net.loss(x, y, nullptr, nullptr), clean);
}

TEST(Training, ReducesLossAndIsDeterministic) {
  Rng data(4);
  const Tensor xs = test::random_tensor({300, 6}, data);
  // Rank-3 target, within reach of the d/2 = 3 hidden units.
  Tensor xe({300, 6});
  for (std::size_t r = 0; r < 300; ++r)
    for (std::size_t j = 0; j < 6; ++j) xe.at(r, j) = 0.5f * xs.at(r, j % 3);
  auto run = [&](std::uint64_t seed) {
    Rng init(seed);
    MlpApprox net(6, 6, init);
    TrainOptions opt;
    opt.steps = 200;
    opt.lr = 1e-2;
    opt.batch_rows = 64;
    opt.seed = seed;
    const TrainReport rep = train_approximator(net, xs, xe, opt);
    return std::make_pair(rep, net.apply(xs));
  };
  const auto [a, fa] = run(1);
  const auto [b, fb] = run(1);
  EXPECT_LT(a.final_loss, 0.2 * a.initial_loss);
  EXPECT_EQ(a.step_losses.size(), 200u);
  EXPECT_EQ(fa, fb);
  EXPECT_EQ(a.final_loss, b.final_loss);
}

TEST(Training, DivergenceRaisesNumericError) {
  Rng data(5);
  const Tensor xs = test::random_tensor({50, 4}, data);
  Rng init(0);
  MlpApprox net(4, 4, init);
  TrainOptions opt;
  opt.steps = 5;
  opt.lr = 1e300;
  EXPECT_THROW(train_approximator(net, xs, xs, opt), NumericError);
}

TEST(Training, RejectsBadInputs) {
  Rng init(0);
  MlpApprox net(4, 4, init);
  EXPECT_THROW(train_approximator(net, Tensor({5, 4}), Tensor({6, 4}), {}), DimensionError);
  TrainOptions opt;
  opt.batch_rows = 0;
  EXPECT_THROW(train_approximator(net, Tensor({5, 4}), Tensor({5, 4}), opt), ArgumentError);
  EXPECT_THROW(net.apply(Tensor({5, 3})), DimensionError);
}

TEST(Persistence, ContainerRoundTrip) {
  Rng rng(6);
  const MlpApprox mlp(6, 6, rng, GeluVariant::kErf);
  const MlpApprox mlp_back = MlpApprox::from_container(mlp.to_container());
  const Matrix x = random_matrix(3, 6, rng);
  const Tensor xt = x.to_tensor();
  // Stored weights are float32.
  EXPECT_LT(max_abs_diff(mlp_back.apply(xt), mlp.apply(xt)), 1e-5);
  EXPECT_EQ(MlpApprox::from_container(mlp_back.to_container()).apply(xt), mlp_back.apply(xt));
  const ResMlpApprox res(6, 0.2, rng);
  const ResMlpApprox res_back = ResMlpApprox::from_container(res.to_container());
  EXPECT_LT(max_abs_diff(res_back.apply(xt), res.apply(xt)), 1e-5);
  EXPECT_EQ(res_back.dropout_p(), 0.2);
  EXPECT_THROW(ResMlpApprox::from_container(mlp.to_container()), FormatError);
  Container c = mlp.to_container();
  c.tensors.erase("fc2.bias");
  EXPECT_THROW(MlpApprox::from_container(c), MissingWeightError);
}

}  // namespace
}  // namespace tba
