#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tba/adam.hpp"
#include "tba/container.hpp"
#include "tba/kernels.hpp"
#include "tba/rng.hpp"
#include "tba/tensor.hpp"

namespace tba {

// Row-major double matrix used for training the small approximator networks.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  static Matrix from_tensor(const Tensor& t);
  Tensor to_tensor() const;
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

struct ParamBlock {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

using Gradients = std::vector<std::vector<double>>;

// Trainable map from d_in to d_out features with hand-written gradients of
//   L = (1/n) sum_rows ||y - f(x)||^2
class TrainableApprox {
 public:
  virtual ~TrainableApprox() = default;

  virtual std::string kind() const = 0;
  std::vector<ParamBlock>& params() { return params_; }
  const std::vector<ParamBlock>& params() const { return params_; }
  std::uint64_t param_count() const;

  // Loss over all rows. When `grads` is non-null it receives dL/dparam in
  // params() order. A non-null `dropout` enables training-mode dropout with
  // masks drawn from it.
  virtual double loss(const Matrix& x, const Matrix& y, Gradients* grads, Rng* dropout) const = 0;
  virtual Matrix forward(const Matrix& x) const = 0;
  Tensor apply(const Tensor& x) const { return forward(Matrix::from_tensor(x)).to_tensor(); }

  Container to_container() const;

 protected:
  // Adds architecture fields to the "__meta__" document.
  virtual void describe(nlohmann::json&) const {}

  std::vector<ParamBlock> params_;
  const ParamBlock& param(std::size_t i) const { return params_[i]; }
};

// Linear(d_in -> d_out/2), GELU, Linear(d_out/2 -> d_out).
class MlpApprox final : public TrainableApprox {
 public:
  MlpApprox(std::size_t d_in, std::size_t d_out, Rng& init, GeluVariant gelu = GeluVariant::kTanh);

  std::string kind() const override { return "mlp"; }
  std::size_t hidden() const { return hidden_; }
  double loss(const Matrix& x, const Matrix& y, Gradients* grads, Rng* dropout) const override;
  Matrix forward(const Matrix& x) const override;

  static MlpApprox from_container(const Container& c);

 private:
  MlpApprox() = default;
  void describe(nlohmann::json& meta) const override;
  std::size_t d_in_ = 0, hidden_ = 0, d_out_ = 0;
  GeluVariant gelu_ = GeluVariant::kTanh;
};

// x_n = LN1(x); out = LN2(FF(x_n) + x_n) with
// FF = Linear(d, d), SiLU, Dropout(p), Linear(d, d). Parameter names follow
// the layer positions: norm1, ff.0, ff.3, norm2.
class ResMlpApprox final : public TrainableApprox {
 public:
  static constexpr double kNormEps = 1e-5;

  ResMlpApprox(std::size_t d, double dropout_p, Rng& init);

  std::string kind() const override { return "resmlp"; }
  double dropout_p() const { return dropout_p_; }
  double loss(const Matrix& x, const Matrix& y, Gradients* grads, Rng* dropout) const override;
  Matrix forward(const Matrix& x) const override;

  static ResMlpApprox from_container(const Container& c);

 private:
  ResMlpApprox() = default;
  void describe(nlohmann::json& meta) const override;
  std::size_t d_ = 0;
  double dropout_p_ = 0.0;
};

struct TrainOptions {
  std::size_t steps = 300;
  double lr = 1e-3;
  std::size_t batch_rows = 256;
  std::uint64_t seed = 0;
};

struct TrainReport {
  double initial_loss = 0.0;  // full fitting set, before the first step
  double final_loss = 0.0;    // full fitting set, dropout off
  std::vector<double> step_losses;
};

// Adam on shuffled mini-batches (reshuffled every pass over the rows).
// Throws NumericError naming the step if the loss becomes non-finite.
TrainReport train_approximator(TrainableApprox& net, const Tensor& xs, const Tensor& xe, const TrainOptions& options);

}  // namespace tba
