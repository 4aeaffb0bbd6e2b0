#pragma once

#include <cstddef>
#include <vector>

#include "tba/tensor.hpp"

namespace tba {

// C = A * B for A [m x k], B [k x n]. Accumulates in double.
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A^T * B for A [n x p], B [n x q], without materializing A^T.
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Row-major square matrix of doubles; the working type for decompositions.
struct DenseMatrix {
  std::size_t n = 0;
  std::vector<double> a;

  explicit DenseMatrix(std::size_t size = 0) : n(size), a(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct SymmetricEigen {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // column j is the eigenvector for values[j]
};

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Only the upper triangle of `m` is read.
SymmetricEigen symmetric_eigen(DenseMatrix m);

// A^T A and A^T B in double. Rows are reduced in a fixed chunk order so the
// result does not depend on the thread count.
DenseMatrix gram(const Tensor& a);
std::vector<double> cross_gram(const Tensor& a, const Tensor& b);

struct LstsqResult {
  Tensor solution;                       // [p x q]
  std::size_t rank = 0;                  // singular values kept
  std::vector<double> singular_values;   // of A, descending
};

inline constexpr double kDefaultRcond = 1e-6;

// Minimum-norm minimizer of ||B - A T||_F. Singular values of A below
// rcond * sigma_max are treated as zero (pseudo-inverse semantics). The right
// singular vectors come from the eigen-decomposition of A^T A, which keeps
// memory at O(p^2) for tall activation matrices.
LstsqResult lstsq_solve(const Tensor& a, const Tensor& b, double rcond = kDefaultRcond);
Tensor lstsq(const Tensor& a, const Tensor& b, double rcond = kDefaultRcond);

struct PcaFit {
  std::vector<double> mean;                // [d]
  Tensor components;                       // [d x k], orthonormal columns
  std::vector<double> explained_variance;  // [k], non-increasing
};

// Top-k principal axes of the column-centered data. Each component is signed
// so that its largest-magnitude entry is non-negative.
PcaFit pca_fit(const Tensor& x, std::size_t k);
// (x - mean) * components, using a previously fitted basis.
Tensor pca_transform(const PcaFit& fit, const Tensor& x);

struct PcaProjection {
  Tensor components;  // [d x k]
  Tensor projected;   // [n x k]
  std::vector<double> explained_variance;
};

PcaProjection pca_project(const Tensor& x, std::size_t k);

}  // namespace tba
