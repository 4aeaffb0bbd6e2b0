#include "tba/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tba/error.hpp"
#include "tba/parallel.hpp"

namespace tba {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be 2-D, got " + shape_str(t.shape()));
  }
}

// Fixed partition of [0, rows) used by the reductions below.
std::vector<std::size_t> chunk_bounds(std::size_t rows) {
  constexpr std::size_t kMinRows = 1024;
  constexpr std::size_t kMaxChunks = 64;
  const std::size_t chunks = std::clamp<std::size_t>((rows + kMinRows - 1) / kMinRows, 1, kMaxChunks);
  std::vector<std::size_t> bounds(chunks + 1);
  for (std::size_t c = 0; c <= chunks; ++c) bounds[c] = rows * c / chunks;
  return bounds;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  const float* bp = b.data();
  auto row_kernel = [&](std::size_t i) {
    thread_local std::vector<double> acc;
    acc.assign(n, 0.0);
    const float* ar = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const float* br = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * br[j];
    }
    float* o = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<float>(acc[j]);
  };
  if (m * k * n >= (1u << 20)) {
    parallel_for(m, row_kernel);
  } else {
    for (std::size_t i = 0; i < m; ++i) row_kernel(i);
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  const auto c = cross_gram(a, b);
  Tensor out({a.dim(1), b.dim(1)});
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = static_cast<float>(c[i]);
  return out;
}

DenseMatrix gram(const Tensor& a) {
  require_matrix(a, "gram input");
  const std::size_t n = a.dim(0), p = a.dim(1);
  const auto bounds = chunk_bounds(n);
  const std::size_t chunks = bounds.size() - 1;
  std::vector<std::vector<double>> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    auto& g = partial[c];
    g.assign(p * p, 0.0);
    std::vector<double> row(p);
    for (std::size_t r = bounds[c]; r < bounds[c + 1]; ++r) {
      const float* src = a.data() + r * p;
      for (std::size_t i = 0; i < p; ++i) row[i] = src[i];
      for (std::size_t i = 0; i < p; ++i) {
        const double ai = row[i];
        if (ai == 0.0) continue;
        double* gi = g.data() + i * p;
        for (std::size_t j = i; j < p; ++j) gi[j] += ai * row[j];
      }
    }
  });
  DenseMatrix out(p);
  for (const auto& g : partial)
    for (std::size_t i = 0; i < p * p; ++i) out.a[i] += g[i];
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j) out(i, j) = out(j, i);
  return out;
}

std::vector<double> cross_gram(const Tensor& a, const Tensor& b) {
  require_matrix(a, "cross_gram lhs");
  require_matrix(b, "cross_gram rhs");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("cross_gram: row counts differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  const auto bounds = chunk_bounds(n);
  const std::size_t chunks = bounds.size() - 1;
  std::vector<std::vector<double>> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    auto& g = partial[c];
    g.assign(p * q, 0.0);
    std::vector<double> brow(q);
    for (std::size_t r = bounds[c]; r < bounds[c + 1]; ++r) {
      const float* ar = a.data() + r * p;
      const float* br = b.data() + r * q;
      for (std::size_t j = 0; j < q; ++j) brow[j] = br[j];
      for (std::size_t i = 0; i < p; ++i) {
        const double ai = ar[i];
        if (ai == 0.0) continue;
        double* gi = g.data() + i * q;
        for (std::size_t j = 0; j < q; ++j) gi[j] += ai * brow[j];
      }
    }
  });
  std::vector<double> out(p * q, 0.0);
  for (const auto& g : partial)
    for (std::size_t i = 0; i < p * q; ++i) out[i] += g[i];
  return out;
}

SymmetricEigen symmetric_eigen(DenseMatrix m) {
  const std::size_t n = m.n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) m(i, j) = m(j, i);

  DenseMatrix v(n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double total = 0.0;
  for (double x : m.a) total += x * x;
  const double tol = 1e-28 * total;

  constexpr int kMaxSweeps = 60;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (off <= tol || off == 0.0) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double app = m(p, p), aqq = m(q, q);
        // Rotation is numerically a no-op once the coupling is below the
        // rounding level of both diagonal entries.
        if (std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
          m(p, q) = m(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = m(k, p), akq = m(k, q);
          m(k, p) = c * akp - s * akq;
          m(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = m(p, k), aqk = m(q, k);
          m(p, k) = c * apk - s * aqk;
          m(q, k) = s * apk + c * aqk;
        }
        m(p, q) = m(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors = DenseMatrix(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = m(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

LstsqResult lstsq_solve(const Tensor& a, const Tensor& b, double rcond) {
  require_matrix(a, "lstsq design matrix");
  require_matrix(b, "lstsq target");
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  if (n == 0 || p == 0 || q == 0) {
    throw DimensionError("lstsq: empty input " + shape_str(a.shape()) + ", " + shape_str(b.shape()));
  }
  if (b.dim(0) != n) {
    throw DimensionError("lstsq: row counts differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  if (!(rcond > 0.0 && rcond < 1.0)) {
    throw ArgumentError("lstsq: rcond must lie in (0, 1), got " + std::to_string(rcond));
  }
  require_finite(a, "lstsq design matrix");
  require_finite(b, "lstsq target");

  const auto eig = symmetric_eigen(gram(a));
  const auto atb = cross_gram(a, b);

  LstsqResult result;
  result.singular_values.resize(p);
  for (std::size_t i = 0; i < p; ++i) result.singular_values[i] = std::sqrt(std::max(eig.values[i], 0.0));
  const double cutoff = rcond * result.singular_values[0];

  std::vector<double> t(p * q, 0.0);
  std::vector<double> coeff(q);
  for (std::size_t k = 0; k < p; ++k) {
    const double sigma = result.singular_values[k];
    if (!(sigma > cutoff) || sigma == 0.0) break;  // values are sorted
    ++result.rank;
    // coeff = v_k^T (A^T B) / sigma^2
    std::fill(coeff.begin(), coeff.end(), 0.0);
    for (std::size_t i = 0; i < p; ++i) {
      const double vik = eig.vectors(i, k);
      for (std::size_t j = 0; j < q; ++j) coeff[j] += vik * atb[i * q + j];
    }
    const double inv = 1.0 / eig.values[k];
    for (std::size_t i = 0; i < p; ++i) {
      const double vik = eig.vectors(i, k) * inv;
      for (std::size_t j = 0; j < q; ++j) t[i * q + j] += vik * coeff[j];
    }
  }

  result.solution = Tensor({p, q});
  for (std::size_t i = 0; i < p * q; ++i) result.solution[i] = static_cast<float>(t[i]);
  require_finite(result.solution, "lstsq solution");
  return result;
}

Tensor lstsq(const Tensor& a, const Tensor& b, double rcond) {
  return lstsq_solve(a, b, rcond).solution;
}

PcaFit pca_fit(const Tensor& x, std::size_t k) {
  require_matrix(x, "pca input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n < 2) throw DimensionError("pca needs at least 2 rows, got " + std::to_string(n));
  if (k < 1 || k > std::min(n, d)) {
    throw DimensionError("pca: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(std::min(n, d)) + "]");
  }
  PcaFit fit;
  fit.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) fit.mean[j] += x.at(r, j);
  for (auto& m : fit.mean) m /= static_cast<double>(n);

  DenseMatrix cov(d);
  std::vector<double> row(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) row[j] = x.at(r, j) - fit.mean[j];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) cov(i, j) += row[i] * row[j];
  }
  const auto eig = symmetric_eigen(cov);

  fit.components = Tensor({d, k});
  fit.explained_variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    fit.explained_variance[c] = std::max(eig.values[c], 0.0) / static_cast<double>(n - 1);
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::abs(eig.vectors(i, c)) > std::abs(eig.vectors(argmax, c))) argmax = i;
    const double sign = eig.vectors(argmax, c) < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < d; ++i)
      fit.components.at(i, c) = static_cast<float>(sign * eig.vectors(i, c));
  }
  return fit;
}

Tensor pca_transform(const PcaFit& fit, const Tensor& x) {
  require_matrix(x, "pca input");
  const std::size_t n = x.dim(0), d = x.dim(1), k = fit.components.dim(1);
  if (d != fit.mean.size()) throw DimensionError("pca_transform: feature dimension mismatch");
  Tensor out({n, k});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += (x.at(r, j) - fit.mean[j]) * fit.components.at(j, c);
      out.at(r, c) = static_cast<float>(acc);
    }
  }
  return out;
}

PcaProjection pca_project(const Tensor& x, std::size_t k) {
  auto fit = pca_fit(x, k);
  auto projected = pca_transform(fit, x);
  return {std::move(fit.components), std::move(projected), std::move(fit.explained_variance)};
}

}  // namespace tba
