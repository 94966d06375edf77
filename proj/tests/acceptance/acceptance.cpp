// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned below.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ctmflow/centralized.hpp"
#include "ctmflow/distributed.hpp"
#include "ctmflow/error.hpp"
#include "ctmflow/final_value.hpp"
#include "ctmflow/harness.hpp"
#include "ctmflow/oracle.hpp"
#include "ctmflow/qp_core.hpp"
#include "fixtures.hpp"

using namespace ctmflow;

namespace {

namespace tol {
constexpr double kOracleFlow = 1e-6;
constexpr double kKkt = 1e-7;
constexpr double kOracleSeconds = 60.0;
constexpr double kDistributedFlow = 1e-6;
constexpr double kDistributedSeconds = 30.0;
constexpr double kStepDrop = 1e-3;
constexpr int kStepDropIterations = 300;
constexpr double kFinalValue = 1e-7;  // times max(1, |exact|)
constexpr double kTableBand = 0.5;
constexpr double kTableTol = 1e-9;
constexpr double kCostShare = 0.8;
constexpr double kOutflowBand = 0.05;
constexpr double kSimulationSeconds = 300.0;
constexpr double kRadiusMargin = 1e-9;
constexpr double kFeasibility = 1e-8;
}  // namespace tol

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Worst constraint violation of any flow returned during the run (criterion 8).
struct FeasibilityLog {
  double worst = 0.0;
  std::size_t checked = 0;
  void add(double v) {
    worst = std::max(worst, v);
    ++checked;
  }
  void add(const AssembledMatrices& am, const Eigen::VectorXd& f) { add(max_violation(am.Q, am.q, f)); }
} feasibility;

SolveReport centralized(const AssembledMatrices& am, const ProblemData& pd, int max_iterations = 400'000) {
  SolveOptions opts;
  opts.epsilon = step_size(am, 0.9);
  opts.max_iterations = max_iterations;
  return solve(am, pd, opts);
}

DistributedOptions distributed_options(const AssembledMatrices& am) {
  DistributedOptions opts;
  opts.epsilon = step_size(am, 0.9);
  opts.seed = 2024;
  return opts;
}

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  const int instances = 60;
  double worst_f = 0.0, worst_kkt = 0.0;
  int unconverged = 0;
  for (int k = 0; k < instances; ++k) {
    const fixtures::Instance inst = fixtures::random_instance(rng, 10);
    const AssembledMatrices am = build_matrices(inst.net, inst.pd);
    const SolveReport rep = centralized(am, inst.pd);
    const OracleResult opt = oracle_solve(am, inst.pd);
    if (rep.status != SolveStatus::Converged) ++unconverged;
    worst_f = std::max(worst_f, max_abs_diff(rep.f_opt, opt.f));
    worst_kkt = std::max(worst_kkt, rep.kkt.worst());
    feasibility.add(am, rep.f_opt);
  }
  const double secs = seconds_since(t0);
  return {worst_f < tol::kOracleFlow && worst_kkt < tol::kKkt && unconverged == 0 && secs < tol::kOracleSeconds,
          fmt::format("{} instances, max |f - f_oracle| {:.2e}, max KKT {:.2e}, unconverged {}, {:.1f} s", instances,
                      worst_f, worst_kkt, unconverged, secs)};
}

Outcome distributed_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  bool converged = true;
  std::size_t d_max = 0;
  for (const auto& [rho, q] : {std::pair{50.0, 100.0}, std::pair{150.0, 150.0}}) {
    const fixtures::Instance inst = fixtures::grid_cycle(rho, q);
    const AssembledMatrices am = build_matrices(inst.net, inst.pd);
    const DistributedReport rep = distributed_solve(inst.net, inst.pd, distributed_options(am));
    const SolveReport ref = centralized(am, inst.pd);
    converged = converged && rep.converged && ref.status == SolveStatus::Converged;
    worst = std::max(worst, max_abs_diff(rep.f, ref.f_opt));
    d_max = std::max(d_max, rep.d_max);
    feasibility.add(am, rep.f);
    feasibility.add(am, ref.f_opt);
  }
  const double secs = seconds_since(t0);
  return {converged && worst < tol::kDistributedFlow && secs < tol::kDistributedSeconds,
          fmt::format("24-cell grid, 2 cycles, max |f_dist - f_cent| {:.2e}, D_max {}, {:.1f} s", worst, d_max, secs)};
}

Outcome step_decay() {
  SimConfig cfg;
  cfg.cycles = 5;
  cfg.eta_trace_cycle = 5;
  const Metrics m = run_simulation(cfg);
  for (const auto& c : m.cycles) feasibility.add(c.max_violation);
  if (m.eta_trace.size() < 2) return {false, "no multiplier trace recorded"};
  const double first = (m.eta_trace[1] - m.eta_trace[0]).norm();
  int hit = -1;
  for (std::size_t k = 1; k + 1 < m.eta_trace.size(); ++k) {
    if ((m.eta_trace[k + 1] - m.eta_trace[k]).norm() < tol::kStepDrop * first) {
      hit = static_cast<int>(k);
      break;
    }
  }
  return {hit >= 0 && hit <= tol::kStepDropIterations,
          fmt::format("cycle 5 of the 2x2 run: ||eta(k+1) - eta(k)|| < 1e-3 ||eta(1) - eta(0)|| first at k = {} "
                      "(limit {}), {} iterations to converge",
                      hit, tol::kStepDropIterations, m.eta_trace.size() - 1)};
}

Outcome final_value_exactness() {
  std::mt19937_64 rng(404);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.05, 0.9);
  double worst = 0.0;
  int over_budget = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 20;
    Eigen::MatrixXd m(n, n);
    for (auto& v : m.reshaped()) v = g(rng);
    m *= u(rng) / m.eigenvalues().cwiseAbs().maxCoeff();
    Eigen::VectorXd c(n), x0(n);
    for (auto& v : c) v = 10.0 * g(rng);
    for (auto& v : x0) v = g(rng);
    const Eigen::VectorXd exact = (Eigen::MatrixXd::Identity(n, n) - m).partialPivLu().solve(c);
    const auto results = run_to_final_all([&m](const Eigen::VectorXd& x) -> Eigen::VectorXd { return m * x; }, c, x0);
    for (int r = 0; r < n; ++r) {
      worst = std::max(worst, std::abs(results[r].y_inf - exact(r)) / std::max(1.0, std::abs(exact(r))));
      if (results[r].observations > static_cast<std::size_t>(2 * n + 2)) ++over_budget;
    }
  }
  return {worst <= tol::kFinalValue && over_budget == 0,
          fmt::format("100 recursions, n <= 20, radius <= 0.9: max scaled error {:.2e}, over 2n+2 budget {}", worst,
                      over_budget)};
}

Outcome table_trend() {
  struct Reference {
    int m, n, naive, d;
  };
  const std::vector<Reference> ref{{2, 2, 15, 14}, {2, 5, 26, 24}, {5, 5, 58, 30}, {5, 10, 84, 34}};
  std::vector<std::pair<int, int>> dims;
  for (const auto& r : ref) dims.emplace_back(r.m, r.n);
  const auto rows = table1_experiment(dims, tol::kTableTol, 1);

  bool dominated = true, monotone = true, in_band = true;
  std::string cells;
  long last_gap = -1;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto naive = static_cast<long>(rows[k].naive());
    const auto d = static_cast<long>(rows[k].d_max());
    dominated = dominated && d <= naive;
    const long gap = naive - d;
    monotone = monotone && gap > last_gap;
    last_gap = gap;
    auto within = [](long got, int want) {
      return std::abs(static_cast<double>(got - want)) <= tol::kTableBand * want;
    };
    const bool ok = within(naive, ref[k].naive) && within(d, ref[k].d);
    in_band = in_band && ok;
    cells += fmt::format("{}{}x{} {}/{} (ref {}/{}{})", k ? ", " : "", ref[k].m, ref[k].n, naive, d, ref[k].naive,
                         ref[k].d, ok ? "" : ", out of band");
  }
  return {dominated && monotone && in_band,
          fmt::format("naive/D: {}; D <= naive {}, gap widening {}, all within 50% {}", cells, dominated ? "yes" : "no",
                      monotone ? "yes" : "no", in_band ? "yes" : "no")};
}

Outcome controller_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  auto run = [](double q, Controller c) {
    SimConfig cfg;
    cfg.cycles = 100;
    cfg.q_in = q;
    cfg.controller = c;
    const Metrics m = run_simulation(cfg);
    for (const auto& cm : m.cycles) feasibility.add(cm.max_violation);
    return m;
  };
  const SimConfig defaults;
  const double light = defaults.rho_cg / 3.0, heavy = defaults.rho_cg / 2.0;

  const Metrics base_a = run(light, Controller::Fixed), ctl_a = run(light, Controller::Centralized);
  int wins = 0, fallbacks = 0;
  for (std::size_t k = 0; k < ctl_a.cycles.size(); ++k) {
    if (ctl_a.cycles[k].avg_cost < base_a.cycles[k].avg_cost) ++wins;
    if (ctl_a.cycles[k].fallback) ++fallbacks;
  }
  const double share = static_cast<double>(wins) / static_cast<double>(ctl_a.cycles.size());
  const double outflow_gap = std::abs(ctl_a.mean_outflow() - base_a.mean_outflow()) / base_a.mean_outflow();
  const bool a_ok = share >= tol::kCostShare && outflow_gap <= tol::kOutflowBand;

  const Metrics base_b = run(heavy, Controller::Fixed), ctl_b = run(heavy, Controller::Centralized);
  for (const auto& c : ctl_b.cycles) fallbacks += c.fallback ? 1 : 0;
  const bool b_ok =
      ctl_b.mean_avg_cost() < base_b.mean_avg_cost() && ctl_b.mean_outflow() > base_b.mean_outflow();

  // The distributed controller solves the same cycles; check it on a short run.
  SimConfig short_cfg;
  short_cfg.cycles = 3;
  short_cfg.q_in = light;
  short_cfg.controller = Controller::Distributed;
  const Metrics dist = run_simulation(short_cfg);
  double dist_gap = 0.0;
  for (std::size_t k = 0; k < dist.cycles.size(); ++k) {
    feasibility.add(dist.cycles[k].max_violation);
    dist_gap = std::max(dist_gap, std::abs(dist.cycles[k].avg_cost - ctl_a.cycles[k].avg_cost));
    dist_gap = std::max(dist_gap, std::abs(dist.cycles[k].total_outflow - ctl_a.cycles[k].total_outflow));
  }
  const double secs = seconds_since(t0);
  return {a_ok && b_ok && fallbacks == 0 && dist_gap < tol::kDistributedFlow && secs < tol::kSimulationSeconds,
          fmt::format("Q_in={:.0f}: cost lower in {:.0f}% of cycles, outflow {:.1f} vs {:.1f} ({:.1f}%); "
                      "Q_in={:.0f}: cost {:.1f} vs {:.1f}, outflow {:.1f} vs {:.1f}; fallbacks {}, "
                      "distributed vs centralized {:.1e}; {:.1f} s",
                      light, 100.0 * share, ctl_a.mean_outflow(), base_a.mean_outflow(), 100.0 * outflow_gap, heavy,
                      ctl_b.mean_avg_cost(), base_b.mean_avg_cost(), ctl_b.mean_outflow(), base_b.mean_outflow(),
                      fallbacks, dist_gap, secs)};
}

Outcome contraction() {
  std::mt19937_64 rng(707);
  double worst = 0.0;
  std::size_t largest = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int intersections = std::uniform_int_distribution<int>(2, 40)(rng);
    const int internal = std::uniform_int_distribution<int>(1, 200 - 2 * intersections)(rng);
    const Network net = Network::build(fixtures::random_network(rng, intersections, internal, 0.1));
    largest = std::max(largest, net.num_cells());
    worst = std::max(worst, spectral_radius(turning_matrices(net).nominal));
    std::vector<std::mt19937_64> streams;
    for (CellIndex i = 0; i < net.num_cells(); ++i) streams.emplace_back(rng());
    for (int draw = 0; draw < 3; ++draw) worst = std::max(worst, spectral_radius(sample_turning(net, streams)));
  }
  return {worst < 1.0 - tol::kRadiusMargin,
          fmt::format("100 networks up to {} cells, nominal and 3 realised splits each: max radius {:.6f}", largest,
                      worst)};
}

Outcome fault_drills() {
  const fixtures::Instance inst = fixtures::grid_cycle(50.0);
  const AssembledMatrices am = build_matrices(inst.net, inst.pd);
  const SolveReport ref = centralized(am, inst.pd);

  DistributedOptions drop = distributed_options(am);
  drop.faults.drop = DropFault{3, 5, inst.net.downstream(5)[0]};
  const DistributedReport a = distributed_solve(inst.net, inst.pd, drop);
  feasibility.add(am, a.f);
  const bool drop_ok = a.dropped == 1 && a.restarts >= 1 && !a.protocol_errors.empty() && a.converged &&
                       max_abs_diff(a.f, ref.f_opt) < tol::kDistributedFlow;

  DistributedOptions corrupt = distributed_options(am);
  corrupt.faults.corrupt_theta_at = inst.net.index_of(7);
  const DistributedReport b = distributed_solve(inst.net, inst.pd, corrupt);
  feasibility.add(am, b.f);
  const bool corrupt_ok =
      b.violations >= 1 && b.learnings >= 2 && b.converged && max_abs_diff(b.f, ref.f_opt) < tol::kDistributedFlow;

  DistributedOptions start = distributed_options(am);
  start.faults.adversarial_start = true;
  const DistributedReport c = distributed_solve(inst.net, inst.pd, start);
  feasibility.add(am, c.f);
  const bool start_ok = c.violations >= 1 && c.converged && max_abs_diff(c.f, ref.f_opt) < tol::kDistributedFlow;

  return {drop_ok && corrupt_ok && start_ok,
          fmt::format("drop: {} ({} restart, \"{}\"); corrupt theta: {} ({} violation, {} learnings); "
                      "fixed-point start: {} ({} violation)",
                      drop_ok ? "recovered" : "FAILED", a.restarts,
                      a.protocol_errors.empty() ? "" : a.protocol_errors.front(), corrupt_ok ? "recovered" : "FAILED",
                      b.violations, b.learnings, start_ok ? "recovered" : "FAILED", c.violations)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "oracle equivalence", oracle_equivalence},
      {2, "distributed equals centralized", distributed_equivalence},
      {3, "multiplier step decay", step_decay},
      {4, "final-value exactness", final_value_exactness},
      {5, "observation-count trend", table_trend},
      {6, "controller vs fixed-time", controller_trend},
      {7, "split matrix contraction", contraction},
      {9, "fault drills", fault_drills},
  };

  int failed = 0;
  auto report = [&failed](int id, const char* name, const Outcome& o) {
    if (!o.pass) ++failed;
    std::printf("criterion %d [%s] %s: %s\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  };
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const Error& e) {
      o = {false, fmt::format("error {}: {}", to_string(e.code()), e.what())};
    }
    report(c.id, c.name, o);
  }
  // Runs after everything else so it covers every flow returned above.
  report(8, "feasibility of returned flows",
         {feasibility.worst <= tol::kFeasibility,
          fmt::format("{} flows checked, worst violation {:.2e}", feasibility.checked, feasibility.worst)});
  return failed;
}
