#include "ctmflow/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "ctmflow/error.hpp"

namespace ctmflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

OracleResult active_set_solve(const FlowQuadratic& fq, const Eigen::MatrixXd& Q, const Eigen::VectorXd& q) {
  const Eigen::Index n = fq.hessian.rows();
  const Eigen::Index m = Q.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(fq.hessian);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::InvalidParams, "flow Hessian is not positive definite");

  // Row k is satisfied when s_k = -(Q_k f + q_k) >= 0; its normal is -Q_k^T.
  const double scale = 1.0 + q.cwiseAbs().maxCoeff();
  const double feas_tol = 1e-12 * scale;

  OracleResult res;
  Eigen::VectorXd f = llt.solve(-fq.linear);
  std::vector<Eigen::Index> active;
  std::vector<double> u;
  const int max_iter = static_cast<int>(50 * (m + n) + 100);

  auto slack = [&](Eigen::Index k) { return -(Q.row(k).dot(f) + q(k)); };

  while (true) {
    Eigen::Index p = -1;
    double worst = -feas_tol;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (std::find(active.begin(), active.end(), k) != active.end()) continue;
      const double s = slack(k);
      if (s < worst) {
        worst = s;
        p = k;
      }
    }
    if (p < 0) break;

    const Eigen::VectorXd np = -Q.row(p).transpose();
    const Eigen::VectorXd hinv_np = llt.solve(np);
    double u_new = 0.0;
    while (true) {
      if (++res.iterations > max_iter) throw Error(ErrorCode::NonConvergence, "active-set iteration cap reached");
      const auto na = static_cast<Eigen::Index>(active.size());
      Eigen::VectorXd r(na);
      Eigen::VectorXd z = hinv_np;
      if (na > 0) {
        Eigen::MatrixXd N(n, na);
        for (Eigen::Index j = 0; j < na; ++j) N.col(j) = -Q.row(active[static_cast<std::size_t>(j)]).transpose();
        const Eigen::MatrixXd hinv_n = llt.solve(N);
        const Eigen::MatrixXd M = N.transpose() * hinv_n;
        r = M.ldlt().solve(N.transpose() * hinv_np);
        z -= hinv_n * r;
      }

      double t1 = kInf;
      Eigen::Index drop = -1;
      for (Eigen::Index j = 0; j < na; ++j) {
        if (r(j) > 0.0) {
          const double ratio = u[static_cast<std::size_t>(j)] / r(j);
          if (ratio < t1) {
            t1 = ratio;
            drop = j;
          }
        }
      }
      const double curvature = z.dot(np);
      const double t2 = curvature > 1e-12 * np.dot(hinv_np) ? -slack(p) / curvature : kInf;
      if (t1 == kInf && t2 == kInf) throw Error(ErrorCode::Infeasible, "constraints admit no flow vector");

      const double t = std::min(t1, t2);
      if (t2 < kInf) f += t * z;
      for (Eigen::Index j = 0; j < na; ++j) u[static_cast<std::size_t>(j)] -= t * r(j);
      u_new += t;
      if (t2 <= t1) {
        active.push_back(p);
        u.push_back(u_new);
        break;
      }
      active.erase(active.begin() + drop);
      u.erase(u.begin() + drop);
    }
  }

  res.f = f;
  res.eta = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < active.size(); ++j) res.eta(active[j]) = std::max(0.0, u[j]);
  return res;
}

OracleResult admm_solve(const FlowQuadratic& fq, const Eigen::MatrixXd& Q, const Eigen::VectorXd& q,
                        const AdmmOptions& opts) {
  const Eigen::Index n = fq.hessian.rows();
  const Eigen::Index m = Q.rows();
  const Eigen::MatrixXd qtq = Q.transpose() * Q;
  const Eigen::VectorXd upper = -q;

  double rho = opts.rho;
  Eigen::LLT<Eigen::MatrixXd> llt(fq.hessian + opts.sigma * Eigen::MatrixXd::Identity(n, n) + rho * qtq);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(m);

  OracleResult res;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    f = llt.solve(opts.sigma * f - fq.linear + Q.transpose() * (rho * z - lam));
    const Eigen::VectorXd qf = Q * f;
    const Eigen::VectorXd z_prev = z;
    z = (qf + lam / rho).cwiseMin(upper);
    lam += rho * (qf - z);

    const double primal = (qf - z).lpNorm<Eigen::Infinity>();
    const double dual = (rho * Q.transpose() * (z - z_prev)).lpNorm<Eigen::Infinity>();
    const double stat = (fq.hessian * f + fq.linear + Q.transpose() * lam).lpNorm<Eigen::Infinity>();
    if (primal < opts.tolerance && dual < opts.tolerance && stat < opts.tolerance) {
      res.iterations = it;
      res.f = f;
      res.eta = lam.cwiseMax(0.0);
      return res;
    }
    if (it % 100 == 0 && primal > 0.0 && dual > 0.0) {
      const double ratio = std::sqrt(primal / dual);
      if (ratio > 5.0 || ratio < 0.2) {
        rho = std::clamp(rho * ratio, 1e-6, 1e6);
        llt.compute(fq.hessian + opts.sigma * Eigen::MatrixXd::Identity(n, n) + rho * qtq);
      }
    }
  }
  throw Error(ErrorCode::NonConvergence, fmt::format("ADMM did not reach {} in {} iterations", opts.tolerance,
                                                      opts.max_iterations));
}

OracleResult oracle_solve(const AssembledMatrices& am, const ProblemData& pd) {
  const FlowQuadratic fq = flow_quadratic(pd, am.G);
  OracleResult res = active_set_solve(fq, am.Q, am.q);
  res.x = pd.x0 - am.G.transpose() * res.f;
  res.zeta = 2.0 * pd.a.cwiseProduct(res.x) + pd.b;
  return res;
}

}  // namespace ctmflow
