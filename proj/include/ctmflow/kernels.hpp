#pragma once

// Data-parallel inner loops shared by the solvers. Every kernel has an OpenMP
// version (namespace kernels) and a plain serial reference (kernels::serial)
// that performs the same arithmetic in the same order, so the two agree bit
// for bit. Tests compare them; bench/ times them.

#include <cstddef>
#include <span>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace ctmflow::kernels {

using RowSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Rows below this count run single-threaded even in the OpenMP kernels.
inline constexpr std::ptrdiff_t kParallelThreshold = 256;

/// out = M * x + c  (one synchronous Jacobi sweep of x <- Mx + c).
void affine_sweep(const RowSparse& m, std::span<const double> x, std::span<const double> c,
                  std::span<double> out);

/// out = A * x with a fixed left-to-right summation order per row.
void gemv(const Eigen::MatrixXd& a, std::span<const double> x, std::span<double> out);

/// eta <- max(0, eta + step * grad), in place. Returns max |eta_new - eta_old|.
double projected_ascent(std::span<double> eta, std::span<const double> grad, double step);

namespace serial {

void affine_sweep(const RowSparse& m, std::span<const double> x, std::span<const double> c,
                  std::span<double> out);
void gemv(const Eigen::MatrixXd& a, std::span<const double> x, std::span<double> out);
double projected_ascent(std::span<double> eta, std::span<const double> grad, double step);

}  // namespace serial

/// Number of threads OpenMP would use (1 when built without OpenMP).
int max_threads();

}  // namespace ctmflow::kernels
