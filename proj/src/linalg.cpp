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

#include "restyle/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include <fmt/format.h>

#include "restyle/error.hpp"

namespace restyle {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError(fmt::format(
        "matrix data has {} entries, expected {}x{}", data_.size(), rows,
        cols));
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged row list");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(data));
}

namespace {

void check_same_shape(const DenseMatrix& a, const DenseMatrix& b,
                      const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(fmt::format("{}: shape {}x{} vs {}x{}", op, a.rows(),
                                     a.cols(), b.rows(), b.cols()));
  }
}

void check_matmul_shapes(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError(fmt::format("matmul: {}x{} times {}x{}", a.rows(),
                                     a.cols(), b.rows(), b.cols()));
  }
}

// One output row: c_row = sum_k a(i, k) * b_row(k), accumulated in k order.
inline void matmul_row(const DenseMatrix& a, const DenseMatrix& b,
                       std::size_t i, double* c_row) {
  const std::size_t m = b.cols();
  const double* b_data = b.values().data();
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double aik = a(i, k);
    const double* b_row = b_data + k * m;
    for (std::size_t j = 0; j < m; ++j) c_row[j] += aik * b_row[j];
  }
}

}  // namespace

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_matmul_shapes(a, b);
  DenseMatrix c(a.rows(), b.cols());
  double* c_data = c.values().data();
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    matmul_row(a, b, static_cast<std::size_t>(i), c_data + i * b.cols());
  }
  return c;
}

namespace serial {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_matmul_shapes(a, b);
  DenseMatrix c(a.rows(), b.cols());
  double* c_data = c.values().data();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    matmul_row(a, b, i, c_data + i * b.cols());
  }
  return c;
}

}  // namespace serial

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "add");
  DenseMatrix c = a;
  axpy(1.0, b, c);
  return c;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "subtract");
  DenseMatrix c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= bv[i];
  return c;
}

DenseMatrix scaled(const DenseMatrix& a, double factor) {
  DenseMatrix c = a;
  for (double& x : c.values()) x *= factor;
  return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

void axpy(double alpha, const DenseMatrix& x, DenseMatrix& y) {
  check_same_shape(x, y, "axpy");
  axpy(alpha, x.values(), y.values());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) {
    throw DimensionError(
        fmt::format("axpy: length {} vs {}", x.size(), y.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

DenseVector vectorize(const DenseMatrix& m) { return m.storage(); }

DenseMatrix unvectorize(std::span<const double> v, std::size_t rows,
                        std::size_t cols) {
  if (v.size() != rows * cols) {
    throw DimensionError(fmt::format(
        "unvectorize: length {} does not match {}x{}", v.size(), rows, cols));
  }
  return DenseMatrix(rows, cols, std::vector<double>(v.begin(), v.end()));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError(
        fmt::format("dot: length {} vs {}", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) {
  // Scaled accumulation keeps tiny and huge vectors from under/overflowing.
  const double scale = max_abs(v);
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double s = 0.0;
  for (double x : v) {
    const double y = x / scale;
    s += y * y;
  }
  return scale * std::sqrt(s);
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double frobenius_norm(const DenseMatrix& m) { return norm(m.values()); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

void require_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(
          fmt::format("{}: non-finite value {} at index {}", what, v[i], i));
    }
  }
}

namespace {

// Columns of the working matrix stored contiguously (column-major), which is
// what one-sided Jacobi touches.
struct JacobiResult {
  std::vector<double> work;  // k columns of length d: a * v
  DenseMatrix v;             // k x k accumulated rotations
  DenseVector sigma;         // column norms of work
};

JacobiResult one_sided_jacobi(std::vector<double> work, std::size_t d,
                              std::size_t k) {
  constexpr int kMaxSweeps = 80;
  constexpr double kTol = 1e-15;
  DenseMatrix v = DenseMatrix::identity(k);
  auto col = [&](std::size_t j) { return work.data() + j * d; };

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double* up = col(p);
        double* uq = col(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          alpha += up[i] * up[i];
          beta += uq[i] * uq[i];
          gamma += up[i] * uq[i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < d; ++i) {
          const double a = up[i];
          const double b = uq[i];
          up[i] = c * a - s * b;
          uq[i] = s * a + c * b;
        }
        for (std::size_t i = 0; i < k; ++i) {
          const double a = v(i, p);
          const double b = v(i, q);
          v(i, p) = c * a - s * b;
          v(i, q) = s * a + c * b;
        }
      }
    }
    if (!rotated) break;
  }

  DenseVector sigma(k);
  for (std::size_t j = 0; j < k; ++j) sigma[j] = norm({col(j), d});
  return {std::move(work), std::move(v), std::move(sigma)};
}

DenseVector solve_from_jacobi(const JacobiResult& jr, std::size_t d,
                              std::size_t k, std::span<const double> target,
                              double rank_tol) {
  const double sigma_max =
      jr.sigma.empty() ? 0.0 : *std::max_element(jr.sigma.begin(),
                                                 jr.sigma.end());
  DenseVector x(k, 0.0);
  if (sigma_max == 0.0) return x;
  const double cutoff = rank_tol * sigma_max;
  for (std::size_t j = 0; j < k; ++j) {
    const double s = jr.sigma[j];
    if (s <= cutoff) continue;
    const double coeff =
        dot({jr.work.data() + j * d, d}, target) / (s * s);
    for (std::size_t i = 0; i < k; ++i) x[i] += jr.v(i, j) * coeff;
  }
  return x;
}

void check_lstsq_args(std::size_t d, std::size_t k, double rank_tol) {
  if (d == 0 || k == 0) {
    throw DimensionError(
        fmt::format("least_squares: empty system ({}x{})", d, k));
  }
  if (!(rank_tol > 0.0) || !std::isfinite(rank_tol)) {
    throw ValidationError(
        fmt::format("least_squares: rank_tol must be positive, got {}",
                    rank_tol));
  }
}

// For wide systems (k > d) solve through the transpose: the minimum-norm
// solution of A x = b is A^T y with y the minimum-norm solution of
// (A A^T) y = b; equivalently x = V S^+ U^T b on the SVD of A^T.
DenseVector solve_wide(const std::vector<double>& colmajor, std::size_t d,
                       std::size_t k, std::span<const double> target,
                       double rank_tol) {
  // Columns of A^T are the rows of A: row i of A has entries colmajor[j*d+i].
  std::vector<double> work(d * k);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) work[i * k + j] = colmajor[j * d + i];
  const JacobiResult jr = one_sided_jacobi(std::move(work), k, d);
  // A^T = W V^T with W = U S  =>  A = V W^T, so
  // x = A^+ b = W S^-2 V^T b restricted to the numerically nonzero sigmas.
  const double sigma_max =
      *std::max_element(jr.sigma.begin(), jr.sigma.end());
  DenseVector x(k, 0.0);
  if (sigma_max == 0.0) return x;
  const double cutoff = rank_tol * sigma_max;
  for (std::size_t j = 0; j < d; ++j) {
    const double s = jr.sigma[j];
    if (s <= cutoff) continue;
    double vtb = 0.0;
    for (std::size_t i = 0; i < d; ++i) vtb += jr.v(i, j) * target[i];
    const double coeff = vtb / (s * s);
    const double* w = jr.work.data() + j * k;
    for (std::size_t i = 0; i < k; ++i) x[i] += w[i] * coeff;
  }
  return x;
}

}  // namespace

ThinSvd thin_svd(const DenseMatrix& a) {
  const std::size_t d = a.rows();
  const std::size_t k = a.cols();
  if (d < k) {
    throw DimensionError(
        fmt::format("thin_svd expects rows >= cols, got {}x{}", d, k));
  }
  require_finite(a.values(), "thin_svd input");
  std::vector<double> work(d * k);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) work[j * d + i] = a(i, j);
  JacobiResult jr = one_sided_jacobi(std::move(work), d, k);

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x,
                                                   std::size_t y) {
    return jr.sigma[x] > jr.sigma[y];
  });

  ThinSvd out{DenseMatrix(d, k), DenseVector(k), DenseMatrix(k, k)};
  for (std::size_t jj = 0; jj < k; ++jj) {
    const std::size_t j = order[jj];
    const double s = jr.sigma[j];
    out.s[jj] = s;
    const double* w = jr.work.data() + j * d;
    if (s > 0.0) {
      for (std::size_t i = 0; i < d; ++i) out.u(i, jj) = w[i] / s;
    }
    for (std::size_t i = 0; i < k; ++i) out.v(i, jj) = jr.v(i, j);
  }
  return out;
}

DenseVector least_squares(const DenseMatrix& columns,
                          std::span<const double> target, double rank_tol) {
  const std::size_t d = columns.rows();
  const std::size_t k = columns.cols();
  check_lstsq_args(d, k, rank_tol);
  if (target.size() != d) {
    throw DimensionError(fmt::format(
        "least_squares: target length {} vs {} rows", target.size(), d));
  }
  require_finite(columns.values(), "least_squares columns");
  require_finite(target, "least_squares target");

  std::vector<double> work(d * k);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) work[j * d + i] = columns(i, j);
  if (k > d) return solve_wide(work, d, k, target, rank_tol);
  const JacobiResult jr = one_sided_jacobi(std::move(work), d, k);
  return solve_from_jacobi(jr, d, k, target, rank_tol);
}

DenseVector least_squares_columns(
    std::span<const std::span<const double>> columns,
    std::span<const double> target, double rank_tol) {
  const std::size_t k = columns.size();
  const std::size_t d = k == 0 ? 0 : columns.front().size();
  check_lstsq_args(d, k, rank_tol);
  if (target.size() != d) {
    throw DimensionError(fmt::format(
        "least_squares: target length {} vs column length {}", target.size(),
        d));
  }
  std::vector<double> work;
  work.reserve(d * k);
  for (const auto& c : columns) {
    if (c.size() != d) {
      throw DimensionError("least_squares: columns differ in length");
    }
    require_finite(c, "least_squares columns");
    work.insert(work.end(), c.begin(), c.end());
  }
  require_finite(target, "least_squares target");
  if (k > d) return solve_wide(work, d, k, target, rank_tol);
  const JacobiResult jr = one_sided_jacobi(std::move(work), d, k);
  return solve_from_jacobi(jr, d, k, target, rank_tol);
}

namespace kernels {

void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* c_row = c + i * m;
    const double* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a_row[p];
      const double* b_row = b + p * m;
      for (std::size_t j = 0; j < m; ++j) c_row[j] += aip * b_row[j];
    }
  }
}

void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* a_row = a + i * k;
    double* c_row = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* b_row = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a_row[p] * b_row[p];
      c_row[j] = accumulate ? c_row[j] + s : s;
    }
  }
}

void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a_row = a + i * k;
    const double* b_row = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a_row[p];
      double* c_row = c + p * m;
      for (std::size_t j = 0; j < m; ++j) c_row[j] += aip * b_row[j];
    }
  }
}

}  // namespace kernels

}  // namespace restyle
