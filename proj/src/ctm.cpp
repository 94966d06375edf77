#include "ctmflow/ctm.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ctmflow/error.hpp"

namespace ctmflow {

namespace {

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
  const std::size_t lo = hi - 1;
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

struct DemandVisitor {
  const CellParams& p;
  double rho;
  double operator()(const Trapezoid& t) const { return std::min(t.capacity / p.rho_cr * rho, t.capacity); }
  double operator()(const Tabulated& t) const { return interpolate(t.rho, t.demand, rho); }
};

struct SupplyVisitor {
  const CellParams& p;
  double rho;
  double operator()(const Trapezoid& t) const {
    if (rho >= p.rho_cg) return 0.0;
    const double wb = t.capacity / (p.rho_cg - p.rho_cr);
    return std::max(0.0, std::min(t.capacity, wb * (p.rho_cg - rho)));
  }
  double operator()(const Tabulated& t) const {
    if (rho >= p.rho_cg) return 0.0;
    return interpolate(t.rho, t.supply, rho);
  }
};

void check_volume(double rho) {
  if (!(rho >= 0.0)) throw Error(ErrorCode::NegativeVolume, fmt::format("volume {} is negative", rho));
}

void check_length(const Eigen::VectorXd& v, std::size_t n, const char* name) {
  if (static_cast<std::size_t>(v.size()) != n) {
    throw Error(ErrorCode::LengthMismatch, fmt::format("{} has {} entries, expected {}", name, v.size(), n));
  }
}

}  // namespace

void validate(const CellParams& p) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidParams, why); };
  if (!(p.rho_cr > 0.0 && p.rho_cr < p.rho_cg)) fail("need 0 < rho_cr < rho_cg");
  if (!(p.a > 0.0)) fail("cost coefficient a must be positive");
  if (!(p.omega > 0.0)) fail("service time omega must be positive");
  if (const auto* t = std::get_if<Trapezoid>(&p.demand_supply)) {
    if (!(t->capacity >= 0.0) || !std::isfinite(t->capacity)) fail("trapezoid capacity must be finite and >= 0");
    return;
  }
  const auto& tab = std::get<Tabulated>(p.demand_supply);
  if (tab.rho.size() < 2 || tab.rho.size() != tab.demand.size() || tab.rho.size() != tab.supply.size()) {
    fail("tabulated diagram needs >= 2 rows of equal length");
  }
  if (tab.rho.front() != 0.0 || tab.demand.front() != 0.0) fail("tabulated demand must start at (0, 0)");
  for (std::size_t k = 1; k < tab.rho.size(); ++k) {
    if (!(tab.rho[k] > tab.rho[k - 1])) fail("tabulated volumes must increase");
    if (tab.demand[k] < tab.demand[k - 1]) fail("tabulated demand must be non-decreasing");
    if (tab.supply[k] > tab.supply[k - 1]) fail("tabulated supply must be non-increasing");
  }
  if (std::any_of(tab.supply.begin(), tab.supply.end(), [](double s) { return s < 0.0; })) {
    fail("tabulated supply must be non-negative");
  }
  if (tab.rho.back() < p.rho_cg || interpolate(tab.rho, tab.supply, p.rho_cg) != 0.0) {
    fail("tabulated supply must reach 0 at rho_cg");
  }
}

double demand(const CellParams& p, double rho) {
  check_volume(rho);
  return std::visit(DemandVisitor{p, rho}, p.demand_supply);
}

double supply(const CellParams& p, double rho) {
  check_volume(rho);
  return std::visit(SupplyVisitor{p, rho}, p.demand_supply);
}

Eigen::VectorXd step_dynamics_unchecked(const Eigen::VectorXd& rho, const Eigen::VectorXd& f,
                                        const Eigen::MatrixXd& realized_r, const Eigen::VectorXd& mu) {
  return rho + mu - f + realized_r.transpose() * f;
}

Eigen::VectorXd step_dynamics(const Network& net, const Eigen::VectorXd& rho, const Eigen::VectorXd& f,
                              const Eigen::MatrixXd& realized_r, const Eigen::VectorXd& mu) {
  const std::size_t n = net.num_cells();
  check_length(rho, n, "rho");
  check_length(f, n, "f");
  check_length(mu, n, "mu");
  if (static_cast<std::size_t>(realized_r.rows()) != n || static_cast<std::size_t>(realized_r.cols()) != n) {
    throw Error(ErrorCode::LengthMismatch, "realized turning matrix has the wrong shape");
  }
  Eigen::VectorXd next = step_dynamics_unchecked(rho, f, realized_r, mu);
  for (Eigen::Index i = 0; i < next.size(); ++i) {
    if (next(i) < -1e-9) {
      throw Error(ErrorCode::NegativeResultingVolume,
                  fmt::format("cell {} would hold {} vehicles", net.label(static_cast<CellIndex>(i)), next(i)));
    }
  }
  return next;
}

ProblemData assemble_problem(const Network& net, const std::vector<CellParams>& params, const CycleInputs& in) {
  const std::size_t n = net.num_cells();
  if (params.size() != n) {
    throw Error(ErrorCode::LengthMismatch, fmt::format("{} parameter records for {} cells", params.size(), n));
  }
  check_length(in.rho, n, "rho");
  check_length(in.mu_nominal, n, "mu_nominal");
  check_length(in.mu_lower, n, "mu_lower");
  check_length(in.mu_upper, n, "mu_upper");
  if (!(in.T > 0.0)) throw Error(ErrorCode::InvalidParams, "cycle duration T must be positive");

  ProblemData pd;
  pd.T = in.T;
  for (Eigen::VectorXd* v : {&pd.x0, &pd.x_lower, &pd.x_upper, &pd.f_upper, &pd.s_upper, &pd.v, &pd.a, &pd.b,
                             &pd.c, &pd.w}) {
    v->resize(static_cast<Eigen::Index>(n));
  }
  for (CellIndex i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const CellParams& p = params[i];
    validate(p);
    const double rho = in.rho(k);
    check_volume(rho);
    if (rho > p.rho_cg) {
      throw Error(ErrorCode::InvalidParams, fmt::format("cell {} holds {} > rho_cg", net.label(i), rho));
    }
    if (!(in.mu_lower(k) <= in.mu_nominal(k) && in.mu_nominal(k) <= in.mu_upper(k))) {
      throw Error(ErrorCode::InvalidParams, fmt::format("cell {}: inflow bounds out of order", net.label(i)));
    }
    if (!net.is_source(i) && (in.mu_lower(k) != 0.0 || in.mu_upper(k) != 0.0)) {
      throw Error(ErrorCode::InvalidParams, fmt::format("cell {} is not an entry but has inflow", net.label(i)));
    }

    double max_ratio = 0.0;
    for (const auto& t : net.turns(i)) max_ratio = std::max(max_ratio, t.nominal);
    const double v = net.is_destination(i) ? p.omega : max_ratio * p.omega;

    pd.x0(k) = rho + in.mu_nominal(k);
    pd.x_lower(k) = rho + in.mu_lower(k);
    pd.x_upper(k) = p.rho_cg - rho - in.mu_upper(k);
    if (pd.x_upper(k) < 0.0) {
      throw Error(ErrorCode::InfeasibleBounds,
                  fmt::format("cell {}: rho + max inflow exceeds rho_cg by {}", net.label(i), -pd.x_upper(k)));
    }
    pd.v(k) = v;
    pd.f_upper(k) = std::min(demand(p, rho), in.T / v);
    pd.s_upper(k) = supply(p, rho);
    pd.a(k) = p.a;
    pd.b(k) = p.b;
    pd.c(k) = p.c;
    pd.w(k) = p.w;
  }
  return pd;
}

}  // namespace ctmflow
