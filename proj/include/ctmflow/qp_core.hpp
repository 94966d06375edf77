#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctmflow/ctm.hpp"
#include "ctmflow/network.hpp"

namespace ctmflow {

/// Six inequality multipliers per cell, blocked per cell in this order.
enum Multiplier : int { kLambda = 0, kTheta, kAlpha, kBeta, kNu, kGamma, kMultipliersPerCell };

inline Eigen::Index eta_index(CellIndex cell, Multiplier m) {
  return static_cast<Eigen::Index>(cell) * kMultipliersPerCell + m;
}

/// One cell's six constraint rows as sparse normals over cells (ascending
/// cell order, zeros dropped) with right-hand sides: normal . f <= rhs.
struct LocalRows {
  std::array<std::vector<std::pair<CellIndex, double>>, kMultipliersPerCell> normal;
  std::array<double, kMultipliersPerCell> rhs{};
};

/// Rows kMultipliersPerCell * i ... of Q f + q <= 0.
LocalRows local_rows(const Eigen::MatrixXd& Q, const Eigen::VectorXd& q, CellIndex i);

/// Weight shifts among one cell's multipliers that keep Q^T eta, and so
/// f*(eta), unchanged and never lower the dual value: multipliers of parallel
/// rows move onto the tightest of them, and opposite rows cancel. Several of a
/// cell's rows coincide in direction (alpha and beta always; lambda and beta
/// on an entry cell), and when their bounds nearly agree the plain projected
/// iteration drifts along the almost flat dual direction they span. Applied
/// after every projected step.
class RowReduction {
 public:
  RowReduction() = default;
  /// Requires feasible bounds (rhs of opposite rows summing to >= 0).
  static RowReduction plan(const LocalRows& rows);
  void apply(std::span<double, kMultipliersPerCell> eta) const;
  bool empty() const { return merges_.empty() && cancels_.empty(); }

 private:
  struct Merge {
    int from = 0, to = 0;
    double scale = 1.0;  ///< normal[from] = scale * normal[to], scale > 0
  };
  struct Cancel {
    int a = 0, b = 0;
    double scale = 1.0;  ///< normal[a] = -scale * normal[b], scale > 0
  };
  std::vector<Merge> merges_;
  std::vector<Cancel> cancels_;
};

struct DualState {
  Eigen::VectorXd eta;   ///< 6N, non-negative
  Eigen::VectorXd zeta;  ///< N, free sign
};

/// Constraint rows Q f + q <= 0 together with the closed-form Lagrangian
/// minimiser f*(eta) = P eta + p. H is Q^T.
struct AssembledMatrices {
  Eigen::MatrixXd G;
  Eigen::MatrixXd H;
  Eigen::MatrixXd P;
  Eigen::VectorXd p;
  Eigen::MatrixXd Q;
  Eigen::VectorXd q;
  double delta = 0.0;   ///< ||P||_F
  double varrho = 0.0;  ///< ||Q||_F
  Eigen::PartialPivLU<Eigen::MatrixXd> g_lu;
};

/// Constraint rows and constants only (no inverse of G).
void constraint_rows(const Network& net, const ProblemData& pd, Eigen::MatrixXd& Q, Eigen::VectorXd& q);

AssembledMatrices build_matrices(const Network& net, const ProblemData& pd);

/// sum a x^2 + b x + c + w f.
double objective(const ProblemData& pd, const Eigen::VectorXd& x, const Eigen::VectorXd& f);

/// The objective after substituting x = x0 - G^T f:  0.5 f^T hessian f + linear^T f + constant.
struct FlowQuadratic {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  double constant = 0.0;

  double operator()(const Eigen::VectorXd& f) const { return 0.5 * f.dot(hessian * f) + linear.dot(f) + constant; }
};

FlowQuadratic flow_quadratic(const ProblemData& pd, const Eigen::MatrixXd& G);

/// Minimiser of the Lagrangian in (x, f) for fixed eta, with the matching zeta.
struct LagrangianPoint {
  Eigen::VectorXd x;
  Eigen::VectorXd f;
  Eigen::VectorXd zeta;
};

LagrangianPoint lagrangian_point(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& eta);

double lagrangian(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& f, const Eigen::VectorXd& zeta, const Eigen::VectorXd& eta);

/// Dual function value at eta.
double dual_value(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& eta);

struct KktReport {
  double stationarity_x = 0.0;
  double stationarity_f = 0.0;
  double primal_eq = 0.0;
  double primal_ineq_max_violation = 0.0;
  double dual_min = 0.0;
  double complementarity_max = 0.0;

  /// Largest of the five non-negative residuals, with a negative dual_min counted as its magnitude.
  double worst() const;
};

KktReport kkt_residuals(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& f, const Eigen::VectorXd& zeta, const Eigen::VectorXd& eta);

/// Largest violation of Q f + q <= 0 (0 when feasible).
double max_violation(const Eigen::MatrixXd& Q, const Eigen::VectorXd& q, const Eigen::VectorXd& f);

/// Row-major, space-separated text; first line holds "rows cols".
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(std::istream& in);

}  // namespace ctmflow
