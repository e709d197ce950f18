// Copyright 2026 The ReStyle Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal dense linear algebra in f64: row-major matrices, vec/unvec, and a
// rank-revealing least-squares solver built on a one-sided Jacobi SVD.

#ifndef RESTYLE_LINALG_HPP_
#define RESTYLE_LINALG_HPP_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace restyle {

using DenseVector = std::vector<double>;

// Singular values below rank_tol * sigma_max are treated as zero.
inline constexpr double kDefaultRankTol = 1e-10;

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  // Throws DimensionError unless data.size() == rows * cols.
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(
      std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a.rows x b.cols product. Rows are distributed across OpenMP threads; each
// output element is accumulated in the same order regardless of thread count.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scaled(const DenseMatrix& a, double factor);
DenseMatrix transpose(const DenseMatrix& a);
// y += alpha * x
void axpy(double alpha, const DenseMatrix& x, DenseMatrix& y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Row-major flattening; unvectorize is its exact inverse.
DenseVector vectorize(const DenseMatrix& m);
DenseMatrix unvectorize(std::span<const double> v, std::size_t rows,
                        std::size_t cols);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
double max_abs(std::span<const double> v);
double frobenius_norm(const DenseMatrix& m);
bool all_finite(std::span<const double> v);

// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(std::span<const double> v, const char* what);

// Thin SVD a = u * diag(s) * v^T of a tall-or-square matrix (rows >= cols),
// computed with one-sided Jacobi rotations. Singular values are returned in
// descending order; u has orthonormal columns wherever s > 0.
struct ThinSvd {
  DenseMatrix u;  // rows x k
  DenseVector s;  // k
  DenseMatrix v;  // k x k
};
ThinSvd thin_svd(const DenseMatrix& a);

// Minimum-norm minimizer of ||columns * s - target||_2. columns is D x K.
DenseVector least_squares(const DenseMatrix& columns,
                          std::span<const double> target,
                          double rank_tol = kDefaultRankTol);

// Same solve with the K columns passed as separate length-D spans, so
// callers holding vectorized deltas do not have to assemble a D x K copy.
DenseVector least_squares_columns(
    std::span<const std::span<const double>> columns,
    std::span<const double> target, double rank_tol = kDefaultRankTol);

namespace kernels {

// Raw row-major kernels shared by the model code. All are single-threaded;
// callers parallelize at a coarser grain.
//
// c[n x m] (+)= a[n x k] * b[k x m]
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c, bool accumulate);
// c[n x m] (+)= a[n x k] * b[m x k]^T
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c, bool accumulate);
// c[k x m] (+)= a[n x k]^T * b[n x m]
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c, bool accumulate);

}  // namespace kernels

namespace serial {

// Single-threaded reference for restyle::matmul. Kept for tests and the
// benchmark; results are bitwise identical to the parallel version.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace serial

}  // namespace restyle

#endif  // RESTYLE_LINALG_HPP_
