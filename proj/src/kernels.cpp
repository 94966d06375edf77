#include "ctmflow/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ctmflow::kernels {

namespace {

inline double sparse_row_dot(const RowSparse& m, std::ptrdiff_t row, std::span<const double> x) {
  double acc = 0.0;
  for (RowSparse::InnerIterator it(m, row); it; ++it) acc += it.value() * x[static_cast<std::size_t>(it.col())];
  return acc;
}

inline double dense_row_dot(const Eigen::MatrixXd& a, std::ptrdiff_t row, std::span<const double> x) {
  double acc = 0.0;
  for (std::ptrdiff_t j = 0; j < a.cols(); ++j) acc += a(row, j) * x[static_cast<std::size_t>(j)];
  return acc;
}

}  // namespace

void affine_sweep(const RowSparse& m, std::span<const double> x, std::span<const double> c,
                  std::span<double> out) {
  assert(x.data() != out.data());
  const std::ptrdiff_t rows = m.rows();
#pragma omp parallel for schedule(static) if (rows >= kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    out[static_cast<std::size_t>(i)] = sparse_row_dot(m, i, x) + c[static_cast<std::size_t>(i)];
  }
}

void gemv(const Eigen::MatrixXd& a, std::span<const double> x, std::span<double> out) {
  const std::ptrdiff_t rows = a.rows();
#pragma omp parallel for schedule(static) if (rows >= kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    out[static_cast<std::size_t>(i)] = dense_row_dot(a, i, x);
  }
}

double projected_ascent(std::span<double> eta, std::span<const double> grad, double step) {
  const auto n = static_cast<std::ptrdiff_t>(eta.size());
  double max_change = 0.0;
#pragma omp parallel for schedule(static) reduction(max : max_change) if (n >= kParallelThreshold)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto u = static_cast<std::size_t>(k);
    const double next = std::max(0.0, eta[u] + step * grad[u]);
    max_change = std::max(max_change, std::abs(next - eta[u]));
    eta[u] = next;
  }
  return max_change;
}

namespace serial {

void affine_sweep(const RowSparse& m, std::span<const double> x, std::span<const double> c,
                  std::span<double> out) {
  for (std::ptrdiff_t i = 0; i < m.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = sparse_row_dot(m, i, x) + c[static_cast<std::size_t>(i)];
  }
}

void gemv(const Eigen::MatrixXd& a, std::span<const double> x, std::span<double> out) {
  for (std::ptrdiff_t i = 0; i < a.rows(); ++i) out[static_cast<std::size_t>(i)] = dense_row_dot(a, i, x);
}

double projected_ascent(std::span<double> eta, std::span<const double> grad, double step) {
  double max_change = 0.0;
  for (std::size_t k = 0; k < eta.size(); ++k) {
    const double next = std::max(0.0, eta[k] + step * grad[k]);
    max_change = std::max(max_change, std::abs(next - eta[k]));
    eta[k] = next;
  }
  return max_change;
}

}  // namespace serial

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace ctmflow::kernels
