#pragma once

// Reference solvers for the per-cycle program, used to check the dual
// iteration. Both work on the flow-space form
//   min 0.5 f^T H f + g^T f   s.t.  Q f + q <= 0
// and are dense; they are meant for small N.

#include <Eigen/Dense>

#include "ctmflow/qp_core.hpp"

namespace ctmflow {

struct OracleResult {
  Eigen::VectorXd x;
  Eigen::VectorXd f;
  Eigen::VectorXd eta;  ///< multipliers of the active rows, zero elsewhere
  Eigen::VectorXd zeta;
  int iterations = 0;
};

/// Goldfarb-Idnani dual active-set method. Throws Infeasible when the
/// constraint set is empty.
OracleResult active_set_solve(const FlowQuadratic& fq, const Eigen::MatrixXd& Q, const Eigen::VectorXd& q);

struct AdmmOptions {
  double rho = 1.0;
  double sigma = 1e-9;
  double tolerance = 1e-11;
  int max_iterations = 2'000'000;
};

/// Operator splitting on Q f = y, y <= -q. Multipliers come from the dual
/// variable of the splitting. Throws NonConvergence when the residuals stay
/// above tolerance.
OracleResult admm_solve(const FlowQuadratic& fq, const Eigen::MatrixXd& Q, const Eigen::VectorXd& q,
                        const AdmmOptions& opts = {});

/// Active-set solve of the assembled program, with x and zeta filled in.
OracleResult oracle_solve(const AssembledMatrices& am, const ProblemData& pd);

}  // namespace ctmflow
