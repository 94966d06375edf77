#pragma once

#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ctmflow/network.hpp"

namespace ctmflow {

/// Piecewise-linear fundamental diagram with a flat top at `capacity`:
/// d(rho) = min(v_f rho, capacity), s(rho) = max(0, min(capacity, w_b (rho_cg - rho))),
/// with v_f and w_b chosen so both curves pass through (rho_cr, capacity).
struct Trapezoid {
  double capacity = 0.0;
};

/// Demand and supply sampled at increasing volumes and interpolated linearly.
/// Outside the table the end values are held.
struct Tabulated {
  std::vector<double> rho;
  std::vector<double> demand;
  std::vector<double> supply;
};

using DemandSupplySpec = std::variant<Trapezoid, Tabulated>;

struct CellParams {
  double rho_cg = 300.0;  ///< congestion volume
  double rho_cr = 120.0;  ///< critical volume
  double omega = 2.0;     ///< seconds of green per vehicle served
  DemandSupplySpec demand_supply = Trapezoid{};
  double a = 0.5;
  double b = 0.0;
  double c = 0.0;
  double w = 0.0;
};

/// Throws InvalidParams when the record breaks 0 < rho_cr < rho_cg, a > 0,
/// omega > 0 or the diagram's shape rules.
void validate(const CellParams& p);

double demand(const CellParams& p, double rho);
double supply(const CellParams& p, double rho);

struct CycleInputs {
  Eigen::VectorXd rho;
  Eigen::VectorXd mu_nominal;
  Eigen::VectorXd mu_lower;
  Eigen::VectorXd mu_upper;
  double T = 90.0;
};

/// Per-cell constants of one cycle's program. Cost coefficients are copied in
/// so the solvers only need this record and the network.
struct ProblemData {
  Eigen::VectorXd x0;
  Eigen::VectorXd x_lower;
  Eigen::VectorXd x_upper;
  Eigen::VectorXd f_upper;
  Eigen::VectorXd s_upper;
  Eigen::VectorXd v;
  double T = 0.0;
  Eigen::VectorXd a, b, c, w;

  std::size_t size() const { return static_cast<std::size_t>(x0.size()); }
};

/// rho + mu - G_r^T f where G_r = I - realized_r. Throws
/// NegativeResultingVolume if any entry drops below -1e-9.
Eigen::VectorXd step_dynamics(const Network& net, const Eigen::VectorXd& rho, const Eigen::VectorXd& f,
                              const Eigen::MatrixXd& realized_r, const Eigen::VectorXd& mu);

/// Same arithmetic without the sign check.
Eigen::VectorXd step_dynamics_unchecked(const Eigen::VectorXd& rho, const Eigen::VectorXd& f,
                                        const Eigen::MatrixXd& realized_r, const Eigen::VectorXd& mu);

ProblemData assemble_problem(const Network& net, const std::vector<CellParams>& params, const CycleInputs& inputs);

}  // namespace ctmflow
