#include "ctmflow/centralized.hpp"

#include <span>

#include <fmt/format.h>

#include "ctmflow/error.hpp"
#include "ctmflow/kernels.hpp"

namespace ctmflow {

double step_size(const AssembledMatrices& am, double safety) {
  if (!(safety > 0.0 && safety < 1.0)) {
    throw Error(ErrorCode::InvalidStepSize, fmt::format("safety factor {} must lie in (0, 1)", safety));
  }
  const double prod = am.varrho * am.delta;
  if (!(prod > 0.0)) throw Error(ErrorCode::DegenerateNorms, "||P|| * ||Q|| is zero");
  return safety * 2.0 / prod;
}

double step_size_or(const AssembledMatrices& am, double safety, double fallback) {
  try {
    return step_size(am, safety);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateNorms) throw;
    return fallback;
  }
}

Eigen::VectorXd dual_gradient(const AssembledMatrices& am, const Eigen::VectorXd& f_star) {
  if (f_star.size() != am.Q.cols()) throw Error(ErrorCode::LengthMismatch, "f must have N entries");
  return am.Q * f_star + am.q;
}

double default_tolerance(double epsilon) { return 1e-10 * epsilon; }

SolveReport solve(const AssembledMatrices& am, const ProblemData& pd, const SolveOptions& opts) {
  if (!(opts.epsilon > 0.0)) throw Error(ErrorCode::InvalidStepSize, "step size must be positive");
  if (am.varrho * am.delta > 0.0 && !(opts.epsilon < 2.0 / (am.varrho * am.delta))) {
    throw Error(ErrorCode::InvalidStepSize, fmt::format("step {} violates epsilon < 2/(varrho delta) = {}",
                                                        opts.epsilon, 2.0 / (am.varrho * am.delta)));
  }
  const double tol = opts.tolerance > 0.0 ? opts.tolerance : default_tolerance(opts.epsilon);
  const Eigen::Index n = am.P.rows();
  const Eigen::Index m = am.Q.rows();

  auto gemv = opts.serial ? &kernels::serial::gemv : &kernels::gemv;
  auto ascent = opts.serial ? &kernels::serial::projected_ascent : &kernels::projected_ascent;

  std::vector<RowReduction> reductions;
  reductions.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c) {
    reductions.push_back(RowReduction::plan(local_rows(am.Q, am.q, static_cast<CellIndex>(c))));
  }

  SolveReport rep;
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd f(n), grad(m), pe(n), prev(m);
  rep.status = SolveStatus::MaxIterExceeded;
  if (opts.record_eta) rep.eta_trace.push_back(eta);
  for (int k = 1; k <= opts.max_iterations; ++k) {
    gemv(am.P, std::span<const double>(eta.data(), static_cast<std::size_t>(m)),
         std::span<double>(pe.data(), static_cast<std::size_t>(n)));
    f = pe + am.p;
    gemv(am.Q, std::span<const double>(f.data(), static_cast<std::size_t>(n)),
         std::span<double>(grad.data(), static_cast<std::size_t>(m)));
    grad += am.q;
    rep.f_opt = f;
    rep.eta_final = eta;
    prev = eta;
    ascent(std::span<double>(eta.data(), static_cast<std::size_t>(m)),
           std::span<const double>(grad.data(), static_cast<std::size_t>(m)), opts.epsilon);
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& plan = reductions[static_cast<std::size_t>(c)];
      if (plan.empty()) continue;
      plan.apply(std::span<double, kMultipliersPerCell>(eta.data() + c * kMultipliersPerCell, kMultipliersPerCell));
    }
    const double change = (eta - prev).lpNorm<Eigen::Infinity>();
    rep.iterations = k;
    rep.final_step_norm = change;
    if (opts.record_trace) rep.step_norms.push_back(change);
    if (opts.record_eta) rep.eta_trace.push_back(eta);
    if (change < tol) {
      rep.status = SolveStatus::Converged;
      break;
    }
  }
  const LagrangianPoint lp = lagrangian_point(am, pd, rep.eta_final);
  rep.kkt = kkt_residuals(am, pd, lp.x, rep.f_opt, lp.zeta, rep.eta_final);
  return rep;
}

}  // namespace ctmflow
