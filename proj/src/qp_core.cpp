#include "ctmflow/qp_core.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "ctmflow/error.hpp"

namespace ctmflow {

void constraint_rows(const Network& net, const ProblemData& pd, Eigen::MatrixXd& Q, Eigen::VectorXd& q) {
  const std::size_t n = net.num_cells();
  if (pd.size() != n) throw Error(ErrorCode::LengthMismatch, "problem data does not match the network");
  const auto rows = static_cast<Eigen::Index>(n) * kMultipliersPerCell;
  Q = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(n));
  q.resize(rows);
  for (CellIndex i = 0; i < n; ++i) {
    const auto fi = static_cast<Eigen::Index>(i);
    const Eigen::Index lam = eta_index(i, kLambda), th = eta_index(i, kTheta), al = eta_index(i, kAlpha),
                       be = eta_index(i, kBeta), nu = eta_index(i, kNu), ga = eta_index(i, kGamma);
    Q(lam, fi) += 1.0;
    Q(th, fi) -= 1.0;
    for (const auto& in : net.inflows(i)) {
      const auto fj = static_cast<Eigen::Index>(in.from);
      Q(lam, fj) -= in.lower;
      Q(th, fj) += in.upper;
      Q(nu, fj) += in.upper;
    }
    Q(al, fi) = -1.0;
    Q(be, fi) = 1.0;
    for (CellIndex j : net.same_sink(i)) Q(ga, static_cast<Eigen::Index>(j)) = pd.v(static_cast<Eigen::Index>(j));

    q(lam) = -pd.x_lower(fi);
    q(th) = -pd.x_upper(fi);
    q(al) = 0.0;
    q(be) = -pd.f_upper(fi);
    q(nu) = -pd.s_upper(fi);
    q(ga) = -pd.T;
  }
}

AssembledMatrices build_matrices(const Network& net, const ProblemData& pd) {
  AssembledMatrices am;
  constraint_rows(net, pd, am.Q, am.q);
  am.H = am.Q.transpose();
  am.G = turning_matrices(net).g;
  am.g_lu.compute(am.G);
  const double det = am.g_lu.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-300) throw Error(ErrorCode::SingularG, "I - R* is singular");

  const Eigen::VectorXd inv_a = pd.a.cwiseInverse();
  // G^-1 H and G^-1 w, then scale by A^-1 and apply G^-T.
  Eigen::MatrixXd ginv_h = am.g_lu.solve(am.H);
  Eigen::VectorXd ginv_w = am.g_lu.solve(pd.w);
  const Eigen::PartialPivLU<Eigen::MatrixXd> gt(am.G.transpose());
  am.P = -0.5 * gt.solve(inv_a.asDiagonal() * ginv_h);
  am.p = gt.solve(pd.x0) + 0.5 * gt.solve(inv_a.cwiseProduct(pd.b)) - 0.5 * gt.solve(inv_a.cwiseProduct(ginv_w));
  am.delta = am.P.norm();
  am.varrho = am.Q.norm();
  return am;
}

double objective(const ProblemData& pd, const Eigen::VectorXd& x, const Eigen::VectorXd& f) {
  if (x.size() != pd.a.size() || f.size() != pd.a.size()) {
    throw Error(ErrorCode::LengthMismatch, "objective needs x and f of length N");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    total += pd.a(i) * x(i) * x(i) + pd.b(i) * x(i) + pd.c(i) + pd.w(i) * f(i);
  }
  return total;
}

FlowQuadratic flow_quadratic(const ProblemData& pd, const Eigen::MatrixXd& G) {
  FlowQuadratic fq;
  fq.hessian = 2.0 * G * pd.a.asDiagonal() * G.transpose();
  fq.linear = -2.0 * G * pd.a.cwiseProduct(pd.x0) - G * pd.b + pd.w;
  fq.constant = (pd.a.cwiseProduct(pd.x0.cwiseAbs2()) + pd.b.cwiseProduct(pd.x0) + pd.c).sum();
  return fq;
}

LagrangianPoint lagrangian_point(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& eta) {
  if (eta.size() != am.Q.rows()) throw Error(ErrorCode::LengthMismatch, "eta must have 6N entries");
  LagrangianPoint lp;
  lp.f = am.P * eta + am.p;
  lp.zeta = am.g_lu.solve(am.H * eta + pd.w);
  lp.x = (lp.zeta - pd.b).cwiseQuotient(2.0 * pd.a);
  return lp;
}

double lagrangian(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& f, const Eigen::VectorXd& zeta, const Eigen::VectorXd& eta) {
  const Eigen::VectorXd eq = pd.x0 - am.G.transpose() * f - x;
  return objective(pd, x, f) + zeta.dot(eq) + eta.dot(am.Q * f + am.q);
}

double dual_value(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& eta) {
  const LagrangianPoint lp = lagrangian_point(am, pd, eta);
  return lagrangian(am, pd, lp.x, lp.f, lp.zeta, eta);
}

double KktReport::worst() const {
  return std::max({stationarity_x, stationarity_f, primal_eq, primal_ineq_max_violation, std::max(0.0, -dual_min),
                   complementarity_max});
}

double max_violation(const Eigen::MatrixXd& Q, const Eigen::VectorXd& q, const Eigen::VectorXd& f) {
  const Eigen::VectorXd g = Q * f + q;
  return std::max(0.0, g.maxCoeff());
}

KktReport kkt_residuals(const AssembledMatrices& am, const ProblemData& pd, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& f, const Eigen::VectorXd& zeta, const Eigen::VectorXd& eta) {
  const Eigen::Index n = am.G.rows();
  if (x.size() != n || f.size() != n || zeta.size() != n || eta.size() != am.Q.rows()) {
    throw Error(ErrorCode::LengthMismatch, "KKT residuals need x, f, zeta of length N and eta of length 6N");
  }
  KktReport r;
  r.stationarity_x = (2.0 * pd.a.cwiseProduct(x) + pd.b - zeta).lpNorm<Eigen::Infinity>();
  r.stationarity_f = (pd.w - am.G * zeta + am.H * eta).lpNorm<Eigen::Infinity>();
  r.primal_eq = (pd.x0 - am.G.transpose() * f - x).lpNorm<Eigen::Infinity>();
  const Eigen::VectorXd g = am.Q * f + am.q;
  r.primal_ineq_max_violation = std::max(0.0, g.maxCoeff());
  r.dual_min = eta.size() > 0 ? eta.minCoeff() : 0.0;
  r.complementarity_max = eta.size() > 0 ? eta.cwiseProduct(g).cwiseAbs().maxCoeff() : 0.0;
  return r;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << fmt::format("{:.17g}", m(i, j));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0) throw Error(ErrorCode::ParseError, "bad matrix header");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(in >> m(i, j))) throw Error(ErrorCode::ParseError, fmt::format("matrix entry ({}, {}) missing", i, j));
    }
  }
  return m;
}

LocalRows local_rows(const Eigen::MatrixXd& Q, const Eigen::VectorXd& q, CellIndex i) {
  LocalRows rows;
  for (int m = 0; m < kMultipliersPerCell; ++m) {
    const Eigen::Index r = eta_index(i, static_cast<Multiplier>(m));
    for (Eigen::Index c = 0; c < Q.cols(); ++c) {
      if (Q(r, c) != 0.0) rows.normal[m].emplace_back(static_cast<CellIndex>(c), Q(r, c));
    }
    rows.rhs[m] = -q(r);
  }
  return rows;
}

namespace {

// Returns s with a = s * b, or 0 when the normals are not parallel.
double parallel_scale(const std::vector<std::pair<CellIndex, double>>& a,
                      const std::vector<std::pair<CellIndex, double>>& b) {
  if (a.empty() || a.size() != b.size()) return 0.0;
  const double s = a[0].second / b[0].second;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].first != b[k].first) return 0.0;
    if (std::abs(a[k].second - s * b[k].second) > 1e-14 * std::abs(a[k].second)) return 0.0;
  }
  return s;
}

}  // namespace

RowReduction RowReduction::plan(const LocalRows& rows) {
  RowReduction out;
  // Classes of positively parallel rows; each keeps its tightest member.
  std::vector<int> tight;
  std::vector<bool> seen(kMultipliersPerCell, false);
  for (int r = 0; r < kMultipliersPerCell; ++r) {
    if (seen[r] || rows.normal[r].empty()) continue;
    std::vector<std::pair<int, double>> members{{r, 1.0}};  // normal[m] = s * normal[r]
    for (int m = r + 1; m < kMultipliersPerCell; ++m) {
      const double s = seen[m] ? 0.0 : parallel_scale(rows.normal[m], rows.normal[r]);
      if (s > 0.0) {
        members.emplace_back(m, s);
        seen[m] = true;
      }
    }
    // Bound on normal[r] . f implied by member m is rhs[m] / s.
    auto best = std::min_element(members.begin(), members.end(), [&](const auto& x, const auto& y) {
      return rows.rhs[x.first] / x.second < rows.rhs[y.first] / y.second;
    });
    for (const auto& [m, s] : members) {
      if (m != best->first) out.merges_.push_back({m, best->first, s / best->second});
    }
    tight.push_back(best->first);
  }
  for (std::size_t x = 0; x < tight.size(); ++x) {
    for (std::size_t y = x + 1; y < tight.size(); ++y) {
      const double s = parallel_scale(rows.normal[tight[x]], rows.normal[tight[y]]);
      if (s < 0.0) out.cancels_.push_back({tight[x], tight[y], -s});
    }
  }
  return out;
}

void RowReduction::apply(std::span<double, kMultipliersPerCell> eta) const {
  for (const auto& m : merges_) {
    eta[m.to] += m.scale * eta[m.from];
    eta[m.from] = 0.0;
  }
  for (const auto& c : cancels_) {
    // eta_a n_a + eta_b n_b = (eta_b - scale eta_a) n_b
    const double weight_a = c.scale * eta[c.a];
    if (weight_a <= eta[c.b]) {
      eta[c.b] -= weight_a;
      eta[c.a] = 0.0;
    } else {
      eta[c.a] -= eta[c.b] / c.scale;
      eta[c.b] = 0.0;
    }
  }
}

}  // namespace ctmflow
