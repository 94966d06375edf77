#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ctmflow/qp_core.hpp"

namespace ctmflow {

/// safety * 2 / (varrho * delta). Throws InvalidStepSize unless 0 < safety < 1
/// and DegenerateNorms when varrho * delta == 0; use step_size_or to get a fallback instead.
double step_size(const AssembledMatrices& am, double safety = 0.5);
double step_size_or(const AssembledMatrices& am, double safety, double fallback);

/// Q f* + q, the gradient of the dual function at the eta that produced f*.
Eigen::VectorXd dual_gradient(const AssembledMatrices& am, const Eigen::VectorXd& f_star);

/// Default stopping threshold. A step of epsilon * g means a gradient entry,
/// i.e. a constraint violation, of about g, so this leaves violations near 1e-10.
double default_tolerance(double epsilon);

enum class SolveStatus { Converged, MaxIterExceeded };

struct SolveOptions {
  double epsilon = 0.0;
  double tolerance = 0.0;  ///< stop when max |eta(k+1) - eta(k)| falls below this
  int max_iterations = 50'000;
  bool record_trace = false;
  bool record_eta = false;  ///< keep every eta(k); memory grows with 6N per iteration
  bool serial = false;  ///< use the serial reference kernels
};

struct SolveReport {
  SolveStatus status = SolveStatus::Converged;
  Eigen::VectorXd f_opt;
  Eigen::VectorXd eta_final;
  int iterations = 0;
  double final_step_norm = 0.0;
  KktReport kkt;
  std::vector<double> step_norms;  ///< max |eta(k+1) - eta(k)| per iteration, when traced
  std::vector<Eigen::VectorXd> eta_trace;  ///< eta(0), eta(1), ... when record_eta is set
};

/// Dual gradient projection from eta = 0: f = P eta + p, then
/// eta = max(0, eta + epsilon (Q f + q)) until the step falls below tolerance.
/// f_opt is the flow of the last iteration, i.e. f*(eta(k)).
SolveReport solve(const AssembledMatrices& am, const ProblemData& pd, const SolveOptions& opts);

}  // namespace ctmflow
