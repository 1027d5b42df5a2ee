#include "dsbp/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "dsbp/rng.hpp"

namespace dsbp::linalg {

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(
    std::initializer_list<std::initializer_list<double>> entries) {
  DenseMatrix m(entries.size(), entries.size() ? entries.begin()->size() : 0);
  std::size_t i = 0;
  for (const auto& r : entries) {
    if (r.size() != m.cols) throw std::invalid_argument("from_rows: ragged rows");
    std::size_t j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return m;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* src = a.row_ptr(i);
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = src[j];
  }
  return t;
}

namespace {

void check_mul(std::size_t inner_a, std::size_t inner_b, const char* what) {
  if (inner_a != inner_b) {
    throw std::invalid_argument(std::string(what) + ": inner dimensions " +
                                std::to_string(inner_a) + " vs " +
                                std::to_string(inner_b));
  }
}

// c(m x n) += a(m x k) * b(k x n), ikj order so the j loop vectorizes.
void accumulate_product(DenseMatrix& c, const DenseMatrix& a, const DenseMatrix& b) {
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* ci = c.row_ptr(i);
    const double* ai = a.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      const double* bk = b.row_ptr(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

}  // namespace

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols, b.rows, "matmul");
  DenseMatrix c(a.rows, b.cols);
  accumulate_product(c, a, b);
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.rows, b.rows, "matmul_tn");
  // (aT b)(i,j) accumulated row by row of a and b keeps both streams contiguous.
  DenseMatrix c(a.cols, b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* ar = a.row_ptr(r);
    const double* br = b.row_ptr(r);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ari = ar[i];
      double* ci = c.row_ptr(i);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += ari * br[j];
    }
  }
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols, b.cols, "matmul_nt");
  DenseMatrix bt = transpose(b);
  DenseMatrix c(a.rows, b.rows);
  accumulate_product(c, a, bt);
  return c;
}

std::vector<double> matvec(const DenseMatrix& a, std::span<const double> x) {
  if (x.size() != a.cols) throw std::invalid_argument("matvec: size mismatch");
  std::vector<double> y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) y[i] = dot(a.row(i), x);
  return y;
}

std::vector<double> matvec_t(const DenseMatrix& a, std::span<const double> x) {
  if (x.size() != a.rows) throw std::invalid_argument("matvec_t: size mismatch");
  std::vector<double> y(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double xi = x[i];
    const double* ai = a.row_ptr(i);
    for (std::size_t j = 0; j < a.cols; ++j) y[j] += xi * ai[j];
  }
  return y;
}

void add_scaled(DenseMatrix& y, double alpha, const DenseMatrix& x) {
  if (!y.same_shape(x)) throw std::invalid_argument("add_scaled: shape mismatch");
  add_scaled(std::span<double>(y.data), alpha, std::span<const double>(x.data));
}

void add_scaled(std::span<double> y, double alpha, std::span<const double> x) {
  if (y.size() != x.size()) throw std::invalid_argument("add_scaled: size mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

void scale(DenseMatrix& a, double alpha) {
  for (double& x : a.data) x *= alpha;
}

void add_outer(DenseMatrix& a, double alpha, std::span<const double> u,
               std::span<const double> v) {
  if (u.size() != a.rows || v.size() != a.cols) {
    throw std::invalid_argument("add_outer: shape mismatch");
  }
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double c = alpha * u[i];
    double* ai = a.row_ptr(i);
    for (std::size_t j = 0; j < a.cols; ++j) ai[j] += c * v[j];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double normalize(std::span<double> v) {
  const double n = norm(v);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
  return n;
}

double frobenius_norm(const DenseMatrix& a) {
  return norm(std::span<const double>(a.data));
}

double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double x : a.data) m = std::max(m, std::abs(x));
  return m;
}

double trace(const DenseMatrix& a) {
  const std::size_t n = std::min(a.rows, a.cols);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a(i, i);
  return s;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool all_finite(const DenseMatrix& a) {
  return all_finite(std::span<const double>(a.data));
}

void require_finite(const DenseMatrix& a, const char* what) {
  if (!all_finite(a)) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

std::uint64_t content_hash(std::span<const double> v) {
  return hash_bytes(v.data(), v.size() * sizeof(double));
}

std::uint64_t content_hash(const DenseMatrix& a) {
  const std::uint64_t shape[2] = {a.rows, a.cols};
  std::uint64_t h = hash_bytes(shape, sizeof(shape));
  return hash_bytes(a.data.data(), a.data.size() * sizeof(double), h);
}

}  // namespace dsbp::linalg
