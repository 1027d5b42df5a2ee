#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace dsbp::linalg {

// Row-major dense matrix of doubles: the carrier for weights, activations,
// gradients and covariances.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> entries);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }
  std::span<double> row(std::size_t i) { return {row_ptr(i), cols}; }
  std::span<const double> row(std::size_t i) const { return {row_ptr(i), cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_shape(const DenseMatrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

DenseMatrix transpose(const DenseMatrix& a);

// c = a * b, c = aT * b, c = a * bT. Plain ikj kernels; deterministic
// summation order, no FP reassociation.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);

std::vector<double> matvec(const DenseMatrix& a, std::span<const double> x);
std::vector<double> matvec_t(const DenseMatrix& a, std::span<const double> x);

void add_scaled(DenseMatrix& y, double alpha, const DenseMatrix& x);  // y += alpha*x
void add_scaled(std::span<double> y, double alpha, std::span<const double> x);
void scale(DenseMatrix& a, double alpha);
// a += alpha * u * vT
void add_outer(DenseMatrix& a, double alpha, std::span<const double> u,
               std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
// Scales v to unit length; returns the original norm (0 leaves v untouched).
double normalize(std::span<double> v);
double frobenius_norm(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);
double trace(const DenseMatrix& a);

bool all_finite(std::span<const double> v);
bool all_finite(const DenseMatrix& a);
// Throws std::invalid_argument naming `what` when a contains NaN/Inf.
void require_finite(const DenseMatrix& a, const char* what);

// FNV-1a over the raw double bytes plus the shape; bitwise trajectory checks.
std::uint64_t content_hash(const DenseMatrix& a);
std::uint64_t content_hash(std::span<const double> v);

}  // namespace dsbp::linalg
