#include "tba/approximators.hpp"

#include <cmath>
#include <numeric>

#include "tba/error.hpp"
#include "tba/parallel.hpp"

namespace tba {

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(t.shape()));
  Matrix m(t.rows(), t.cols());
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = t[i];
  return m;
}

Tensor Matrix::to_tensor() const {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

namespace {

constexpr std::size_t kParallelRows = 64;

void for_rows(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n >= kParallelRows) {
    parallel_for(n, fn);
  } else {
    for (std::size_t i = 0; i < n; ++i) fn(i);
  }
}

// x [n x k] * w [k x m] + b [m]
Matrix affine(const Matrix& x, const std::vector<double>& w, const std::vector<double>& b, std::size_t m) {
  const std::size_t k = x.cols;
  Matrix out(x.rows, m);
  for_rows(x.rows, [&](std::size_t r) {
    double* o = &out.v[r * m];
    for (std::size_t j = 0; j < m; ++j) o[j] = b[j];
    for (std::size_t p = 0; p < k; ++p) {
      const double a = x(r, p);
      if (a == 0.0) continue;
      const double* wr = &w[p * m];
      for (std::size_t j = 0; j < m; ++j) o[j] += a * wr[j];
    }
  });
  return out;
}

// a^T g for a [n x k], g [n x m], written into out [k x m].
void accumulate_tn(const Matrix& a, const Matrix& g, std::vector<double>& out) {
  const std::size_t n = a.rows, k = a.cols, m = g.cols;
  for_rows(k, [&](std::size_t p) {
    double* o = &out[p * m];
    for (std::size_t r = 0; r < n; ++r) {
      const double s = a(r, p);
      if (s == 0.0) continue;
      const double* gr = &g.v[r * m];
      for (std::size_t j = 0; j < m; ++j) o[j] += s * gr[j];
    }
  });
}

void accumulate_colsum(const Matrix& g, std::vector<double>& out) {
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t j = 0; j < g.cols; ++j) out[j] += g(r, j);
}

// g [n x m] * w^T for w [k x m]
Matrix times_transpose(const Matrix& g, const std::vector<double>& w, std::size_t k) {
  const std::size_t m = g.cols;
  Matrix out(g.rows, k);
  for_rows(g.rows, [&](std::size_t r) {
    const double* gr = &g.v[r * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double* wr = &w[p * m];
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gr[j] * wr[j];
      out(r, p) = s;
    }
  });
  return out;
}

struct NormCache {
  Matrix xhat;
  std::vector<double> inv_sigma;
};

Matrix norm_forward(const Matrix& x, const std::vector<double>& gamma, const std::vector<double>& beta, double eps,
                    NormCache* cache) {
  const std::size_t n = x.rows, d = x.cols;
  Matrix y(n, d);
  if (cache) {
    cache->xhat = Matrix(n, d);
    cache->inv_sigma.assign(n, 0.0);
  }
  for_rows(n, [&](std::size_t r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x(r, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x(r, j) - mean) * inv;
      y(r, j) = gamma[j] * h + beta[j];
      if (cache) cache->xhat(r, j) = h;
    }
    if (cache) cache->inv_sigma[r] = inv;
  });
  return y;
}

// Returns dL/dx; adds into dgamma/dbeta.
Matrix norm_backward(const Matrix& dy, const NormCache& cache, const std::vector<double>& gamma,
                     std::vector<double>& dgamma, std::vector<double>& dbeta) {
  const std::size_t n = dy.rows, d = dy.cols;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      dgamma[j] += dy(r, j) * cache.xhat(r, j);
      dbeta[j] += dy(r, j);
    }
  }
  Matrix dx(n, d);
  for_rows(n, [&](std::size_t r) {
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy(r, j) * gamma[j];
      mean_g += g;
      mean_gx += g * cache.xhat(r, j);
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy(r, j) * gamma[j];
      dx(r, j) = cache.inv_sigma[r] * (g - mean_g - cache.xhat(r, j) * mean_gx);
    }
  });
  return dx;
}

// Squared-error loss and its gradient 2 (f - y) / n.
double squared_loss(const Matrix& f, const Matrix& y, Matrix* grad) {
  if (f.rows != y.rows || f.cols != y.cols) {
    throw DimensionError("target is " + std::to_string(y.rows) + "x" + std::to_string(y.cols) + ", prediction is " +
                         std::to_string(f.rows) + "x" + std::to_string(f.cols));
  }
  const double n = static_cast<double>(f.rows);
  double total = 0.0;
  if (grad) *grad = Matrix(f.rows, f.cols);
  for (std::size_t i = 0; i < f.v.size(); ++i) {
    const double diff = f.v[i] - y.v[i];
    total += diff * diff;
    if (grad) grad->v[i] = 2.0 * diff / n;
  }
  return total / n;
}

void init_linear(ParamBlock& w, ParamBlock& b, std::size_t in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& x : w.values) x = rng.uniform(-bound, bound);
  for (auto& x : b.values) x = rng.uniform(-bound, bound);
}

ParamBlock make_block(std::string name, Shape shape, double fill = 0.0) {
  const std::size_t n = shape_numel(shape);
  return {std::move(name), std::move(shape), std::vector<double>(n, fill)};
}

void require_input(const Matrix& x, std::size_t d, const char* what) {
  if (x.cols != d) {
    throw DimensionError(std::string(what) + ": input has " + std::to_string(x.cols) + " features, expected " +
                         std::to_string(d));
  }
}

void load_params(std::vector<ParamBlock>& params, const Container& c) {
  for (auto& p : params) {
    const Tensor& t = c.tensor(p.name);
    if (t.shape() != p.shape) {
      throw ShapeMismatchError(p.name + ": expected " + shape_str(p.shape) + ", found " + shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = t[i];
  }
}

const nlohmann::json& meta_of_kind(const Container& c, const std::string& kind) {
  const auto& meta = c.document("__meta__");
  if (!meta.contains("kind") || meta["kind"] != kind) {
    throw HeaderError("approximator container is not of kind '" + kind + "'");
  }
  return meta;
}

}  // namespace

std::uint64_t TrainableApprox::param_count() const {
  std::uint64_t n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

Container TrainableApprox::to_container() const {
  Container c;
  for (const auto& p : params_) {
    Tensor t(p.shape);
    for (std::size_t i = 0; i < p.values.size(); ++i) t[i] = static_cast<float>(p.values[i]);
    c.tensors.emplace(p.name, std::move(t));
  }
  nlohmann::json meta = {{"kind", kind()}};
  describe(meta);
  c.documents["__meta__"] = std::move(meta);
  return c;
}

MlpApprox::MlpApprox(std::size_t d_in, std::size_t d_out, Rng& init, GeluVariant gelu)
    : d_in_(d_in), hidden_(d_out / 2), d_out_(d_out), gelu_(gelu) {
  if (d_in == 0 || hidden_ == 0) throw ArgumentError("MLP approximator needs d_in >= 1 and d_out >= 2");
  params_ = {make_block("fc1.weight", {d_in_, hidden_}), make_block("fc1.bias", {hidden_}),
             make_block("fc2.weight", {hidden_, d_out_}), make_block("fc2.bias", {d_out_})};
  init_linear(params_[0], params_[1], d_in_, init);
  init_linear(params_[2], params_[3], hidden_, init);
}

Matrix MlpApprox::forward(const Matrix& x) const {
  require_input(x, d_in_, "mlp");
  Matrix h = affine(x, param(0).values, param(1).values, hidden_);
  for (auto& v : h.v) v = gelu(v, gelu_);
  return affine(h, param(2).values, param(3).values, d_out_);
}

double MlpApprox::loss(const Matrix& x, const Matrix& y, Gradients* grads, Rng*) const {
  require_input(x, d_in_, "mlp");
  const Matrix z1 = affine(x, param(0).values, param(1).values, hidden_);
  Matrix a1 = z1;
  for (auto& v : a1.v) v = gelu(v, gelu_);
  const Matrix f = affine(a1, param(2).values, param(3).values, d_out_);
  Matrix g;
  const double value = squared_loss(f, y, grads ? &g : nullptr);
  if (!grads) return value;

  grads->assign(params_.size(), {});
  for (std::size_t i = 0; i < params_.size(); ++i) (*grads)[i].assign(params_[i].values.size(), 0.0);
  accumulate_tn(a1, g, (*grads)[2]);
  accumulate_colsum(g, (*grads)[3]);
  Matrix dz1 = times_transpose(g, param(2).values, hidden_);
  for (std::size_t i = 0; i < dz1.v.size(); ++i) dz1.v[i] *= gelu_grad(z1.v[i], gelu_);
  accumulate_tn(x, dz1, (*grads)[0]);
  accumulate_colsum(dz1, (*grads)[1]);
  return value;
}

void MlpApprox::describe(nlohmann::json& meta) const {
  meta["gelu"] = gelu_ == GeluVariant::kErf ? "erf" : "tanh";
}

MlpApprox MlpApprox::from_container(const Container& c) {
  const auto& meta = meta_of_kind(c, "mlp");
  const Tensor& w1 = c.tensor("fc1.weight");
  const Tensor& w2 = c.tensor("fc2.weight");
  if (w1.rank() != 2 || w2.rank() != 2) throw ShapeMismatchError("mlp weights must be 2-D");
  MlpApprox net;
  net.d_in_ = w1.dim(0);
  net.hidden_ = w1.dim(1);
  net.d_out_ = w2.dim(1);
  net.gelu_ = meta.value("gelu", std::string("tanh")) == "erf" ? GeluVariant::kErf : GeluVariant::kTanh;
  net.params_ = {make_block("fc1.weight", {net.d_in_, net.hidden_}), make_block("fc1.bias", {net.hidden_}),
                 make_block("fc2.weight", {net.hidden_, net.d_out_}), make_block("fc2.bias", {net.d_out_})};
  load_params(net.params_, c);
  return net;
}

ResMlpApprox::ResMlpApprox(std::size_t d, double dropout_p, Rng& init) : d_(d), dropout_p_(dropout_p) {
  if (d == 0) throw ArgumentError("Res-MLP approximator needs d >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ArgumentError("dropout probability must be in [0, 1)");
  params_ = {make_block("norm1.gamma", {d}, 1.0), make_block("norm1.beta", {d}),
             make_block("ff.0.weight", {d, d}),   make_block("ff.0.bias", {d}),
             make_block("ff.3.weight", {d, d}),   make_block("ff.3.bias", {d}),
             make_block("norm2.gamma", {d}, 1.0), make_block("norm2.beta", {d})};
  init_linear(params_[2], params_[3], d, init);
  init_linear(params_[4], params_[5], d, init);
}

Matrix ResMlpApprox::forward(const Matrix& x) const {
  require_input(x, d_, "resmlp");
  const Matrix u = norm_forward(x, param(0).values, param(1).values, kNormEps, nullptr);
  Matrix s = affine(u, param(2).values, param(3).values, d_);
  for (auto& v : s.v) v = silu(v);
  Matrix r = affine(s, param(4).values, param(5).values, d_);
  for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] += u.v[i];
  return norm_forward(r, param(6).values, param(7).values, kNormEps, nullptr);
}

double ResMlpApprox::loss(const Matrix& x, const Matrix& y, Gradients* grads, Rng* dropout) const {
  require_input(x, d_, "resmlp");
  NormCache n1, n2;
  const Matrix u = norm_forward(x, param(0).values, param(1).values, kNormEps, &n1);
  const Matrix z1 = affine(u, param(2).values, param(3).values, d_);
  Matrix m = z1;
  for (auto& v : m.v) v = silu(v);
  // Inverted dropout: kept units are scaled by 1/(1-p).
  std::vector<double> mask;
  if (dropout && dropout_p_ > 0.0) {
    mask.resize(m.v.size());
    const double keep = 1.0 / (1.0 - dropout_p_);
    for (auto& k : mask) k = dropout->bernoulli(dropout_p_) ? 0.0 : keep;
    for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] *= mask[i];
  }
  Matrix r = affine(m, param(4).values, param(5).values, d_);
  for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] += u.v[i];
  const Matrix f = norm_forward(r, param(6).values, param(7).values, kNormEps, &n2);
  Matrix g;
  const double value = squared_loss(f, y, grads ? &g : nullptr);
  if (!grads) return value;

  auto& gr = *grads;
  gr.assign(params_.size(), {});
  for (std::size_t i = 0; i < params_.size(); ++i) gr[i].assign(params_[i].values.size(), 0.0);
  const Matrix dr = norm_backward(g, n2, param(6).values, gr[6], gr[7]);
  accumulate_tn(m, dr, gr[4]);
  accumulate_colsum(dr, gr[5]);
  Matrix dz1 = times_transpose(dr, param(4).values, d_);
  for (std::size_t i = 0; i < dz1.v.size(); ++i) {
    if (!mask.empty()) dz1.v[i] *= mask[i];
    dz1.v[i] *= silu_grad(z1.v[i]);
  }
  accumulate_tn(u, dz1, gr[2]);
  accumulate_colsum(dz1, gr[3]);
  Matrix du = times_transpose(dz1, param(2).values, d_);
  for (std::size_t i = 0; i < du.v.size(); ++i) du.v[i] += dr.v[i];
  norm_backward(du, n1, param(0).values, gr[0], gr[1]);
  return value;
}

void ResMlpApprox::describe(nlohmann::json& meta) const { meta["dropout_p"] = dropout_p_; }

ResMlpApprox ResMlpApprox::from_container(const Container& c) {
  const auto& meta = meta_of_kind(c, "resmlp");
  const Tensor& w = c.tensor("ff.0.weight");
  if (w.rank() != 2 || w.dim(0) != w.dim(1)) throw ShapeMismatchError("ff.0.weight must be square");
  ResMlpApprox net;
  net.d_ = w.dim(0);
  net.dropout_p_ = meta.value("dropout_p", 0.0);
  const std::size_t d = net.d_;
  net.params_ = {make_block("norm1.gamma", {d}), make_block("norm1.beta", {d}), make_block("ff.0.weight", {d, d}),
                 make_block("ff.0.bias", {d}),   make_block("ff.3.weight", {d, d}), make_block("ff.3.bias", {d}),
                 make_block("norm2.gamma", {d}), make_block("norm2.beta", {d})};
  load_params(net.params_, c);
  return net;
}

TrainReport train_approximator(TrainableApprox& net, const Tensor& xs, const Tensor& xe, const TrainOptions& options) {
  if (xs.rank() != 2 || xe.rank() != 2 || xs.rows() != xe.rows()) {
    throw DimensionError("training inputs " + shape_str(xs.shape()) + " and " + shape_str(xe.shape()) +
                         " must be 2-D with equal row counts");
  }
  if (xs.rows() == 0) throw DimensionError("no training rows");
  if (options.batch_rows == 0) throw ArgumentError("batch size must be positive");
  require_finite(xs, "approximator input");
  require_finite(xe, "approximator target");

  const Matrix x = Matrix::from_tensor(xs);
  const Matrix y = Matrix::from_tensor(xe);
  const std::size_t n = x.rows;
  const std::size_t batch = std::min(options.batch_rows, n);

  Rng root(options.seed);
  Rng order_rng = root.fork(1);
  Rng dropout_rng = root.fork(2);

  std::vector<std::size_t> sizes;
  for (const auto& p : net.params()) sizes.push_back(p.values.size());
  Adam<double> adam(AdamConfig{.lr = options.lr}, sizes);

  TrainReport report;
  report.initial_loss = net.loss(x, y, nullptr, nullptr);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  Matrix bx(batch, x.cols), by(batch, y.cols);
  Gradients grads;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == n) {
        order_rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const std::size_t row = order[cursor++];
      std::copy_n(&x.v[row * x.cols], x.cols, &bx.v[i * x.cols]);
      std::copy_n(&y.v[row * y.cols], y.cols, &by.v[i * y.cols]);
    }
    const double value = net.loss(bx, by, &grads, &dropout_rng);
    if (!std::isfinite(value)) {
      throw NumericError("approximator training diverged: non-finite loss at step " + std::to_string(step));
    }
    report.step_losses.push_back(value);
    std::vector<std::span<double>> ps;
    std::vector<std::span<const double>> gs;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      ps.emplace_back(net.params()[i].values);
      gs.emplace_back(grads[i]);
    }
    adam.step(ps, gs);
  }
  // Weights are stored as f32; rounding here keeps a saved approximator
  // bit-identical to the one just trained.
  for (auto& p : net.params())
    for (auto& v : p.values) v = static_cast<float>(v);
  report.final_loss = net.loss(x, y, nullptr, nullptr);
  if (!std::isfinite(report.final_loss)) throw NumericError("approximator training produced a non-finite final loss");
  return report;
}

}  // namespace tba
