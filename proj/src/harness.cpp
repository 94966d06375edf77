#include "ctmflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ctmflow/centralized.hpp"
#include "ctmflow/distributed.hpp"
#include "ctmflow/error.hpp"
#include "ctmflow/final_value.hpp"
#include "ctmflow/io.hpp"
#include "ctmflow/qp_core.hpp"

namespace ctmflow {

namespace {

constexpr double kFeasibilityTol = 1e-8;

std::mt19937_64 cell_stream(std::uint64_t seed, long label, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(label), purpose};
  return std::mt19937_64(seq);
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

void sample_row(const Network& net, CellIndex i, std::mt19937_64& rng, Eigen::MatrixXd& r) {
  const auto turns = net.turns(i);
  if (turns.empty()) return;
  std::vector<double> draw(turns.size());
  for (std::size_t k = 0; k < turns.size(); ++k) {
    draw[k] = turns[k].lower + (turns[k].upper - turns[k].lower) * uniform01(rng);
  }
  auto shifted_sum = [&](double c) {
    double s = 0.0;
    for (std::size_t k = 0; k < turns.size(); ++k) s += std::clamp(draw[k] + c, turns[k].lower, turns[k].upper);
    return s;
  };
  // The clamped sum is non-decreasing in c; bisect for sum == 1.
  double lo = -1.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-17; ++it) {
    const double mid = 0.5 * (lo + hi);
    (shifted_sum(mid) < 1.0 ? lo : hi) = mid;
  }
  const double c = 0.5 * (lo + hi);
  double total = 0.0;
  for (std::size_t k = 0; k < turns.size(); ++k) {
    draw[k] = std::clamp(draw[k] + c, turns[k].lower, turns[k].upper);
    total += draw[k];
  }
  for (std::size_t k = 0; k < turns.size(); ++k) {
    r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(turns[k].to)) = draw[k] / total;
  }
}

}  // namespace

std::string to_string(Controller c) {
  switch (c) {
    case Controller::Fixed: return "fixed";
    case Controller::Centralized: return "centralized";
    case Controller::Distributed: return "distributed";
  }
  return "unknown";
}

Controller controller_from_string(const std::string& name) {
  if (name == "fixed") return Controller::Fixed;
  if (name == "centralized") return Controller::Centralized;
  if (name == "distributed") return Controller::Distributed;
  throw Error(ErrorCode::InvalidParams, fmt::format("unknown controller '{}'", name));
}

void validate(const SimConfig& cfg) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidParams, why); };
  if (cfg.m < 1 || cfg.n < 1) fail("grid dimensions must be >= 1");
  if (cfg.cycles < 1) fail("need at least one cycle");
  if (!(cfg.T > 0.0)) fail("cycle duration must be positive");
  if (!(cfg.q_in >= 0.0)) fail("inflow level must be >= 0");
  if (!(cfg.ratio_uncertainty >= 0.0 && cfg.ratio_uncertainty < 1.0)) fail("ratio uncertainty must lie in [0, 1)");
  if (!(cfg.safety > 0.0 && cfg.safety < 1.0)) fail("step safety factor must lie in (0, 1)");
  if (!(cfg.rho_cg > 0.0)) fail("rho_cg must be positive");
  if (!(cfg.rho_cr_fraction > 0.0 && cfg.rho_cr_fraction < 1.0)) fail("rho_cr fraction must lie in (0, 1)");
  if (!(cfg.omega > 0.0)) fail("omega must be positive");
  if (!(cfg.inflow_spread >= 0.0)) fail("inflow spread must be >= 0");
  if (!(cfg.initial_fraction >= 0.0 && cfg.initial_fraction <= 1.0)) fail("initial fraction must lie in [0, 1]");
  if (cfg.max_iterations < 1) fail("max_iterations must be >= 1");
}

std::vector<CellParams> experiment_params(const Network& net, const SimConfig& cfg) {
  std::vector<CellParams> params(net.num_cells());
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    CellParams& p = params[i];
    p.rho_cg = cfg.rho_cg;
    p.rho_cr = cfg.rho_cr_fraction * cfg.rho_cg;
    p.omega = cfg.omega;
    p.a = net.is_source(i) ? 0.55 : 0.5;
    p.w = net.is_destination(i) ? -20.0 : -10.0;
    p.b = 0.0;
    p.c = 0.0;
    double max_ratio = 0.0;
    for (const auto& t : net.turns(i)) max_ratio = std::max(max_ratio, t.nominal);
    const double v = net.is_destination(i) ? cfg.omega : max_ratio * cfg.omega;
    p.demand_supply = Trapezoid{cfg.T / v};
  }
  return params;
}

Eigen::VectorXd fixed_time_controller(const Network& net, const ProblemData& pd,
                                      const std::vector<CellParams>& params, const CycleInputs& inputs) {
  const std::size_t n = net.num_cells();
  Eigen::VectorXd f(static_cast<Eigen::Index>(n));
  for (CellIndex i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double green =
        net.is_destination(i) ? inputs.T : inputs.T / static_cast<double>(net.same_sink(i).size());
    const double served = green / pd.v(k);
    f(k) = std::max(0.0, std::min({demand(params[i], inputs.rho(k)), served, pd.x_lower(k)}));
  }
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  for (CellIndex i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    double incoming = 0.0;
    for (const auto& in : net.inflows(i)) incoming += in.upper * f(static_cast<Eigen::Index>(in.from));
    const double room = std::max(0.0, std::min(pd.s_upper(k), pd.x_upper(k)));
    if (incoming > room) scale(k) = room / incoming;
  }
  for (CellIndex i = 0; i < n; ++i) {
    double s = 1.0;
    for (CellIndex j : net.downstream(i)) s = std::min(s, scale(static_cast<Eigen::Index>(j)));
    f(static_cast<Eigen::Index>(i)) *= s;
  }
  return f;
}

double average_distribution_cost(const std::vector<CellParams>& params, const Eigen::VectorXd& rho) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double r = rho(static_cast<Eigen::Index>(i));
    num += params[i].a * r * r;
    den += r;
  }
  return den > 0.0 ? num / den : 0.0;
}

double total_outflow(const Network& net, const Eigen::VectorXd& f) {
  double total = 0.0;
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    if (net.is_destination(i)) total += f(static_cast<Eigen::Index>(i));
  }
  return total;
}

double Metrics::mean_avg_cost() const {
  if (cycles.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cycles) s += c.avg_cost;
  return s / static_cast<double>(cycles.size());
}

double Metrics::mean_outflow() const {
  if (cycles.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cycles) s += c.total_outflow;
  return s / static_cast<double>(cycles.size());
}

Eigen::MatrixXd sample_turning(const Network& net, std::vector<std::mt19937_64>& per_cell) {
  const auto n = static_cast<Eigen::Index>(net.num_cells());
  if (per_cell.size() != net.num_cells()) throw Error(ErrorCode::LengthMismatch, "one generator per cell needed");
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
  for (CellIndex i = 0; i < net.num_cells(); ++i) sample_row(net, i, per_cell[i], r);
  return r;
}

Metrics run_simulation(const SimConfig& cfg) {
  validate(cfg);
  const Network net = grid_network(cfg.m, cfg.n, GridParams{cfg.ratio_uncertainty});
  const std::vector<CellParams> params = experiment_params(net, cfg);
  const std::size_t n = net.num_cells();
  const auto nn = static_cast<Eigen::Index>(n);

  std::vector<std::mt19937_64> inflow_rng, turning_rng;
  for (CellIndex i = 0; i < n; ++i) {
    inflow_rng.push_back(cell_stream(cfg.seed, net.label(i), 1));
    turning_rng.push_back(cell_stream(cfg.seed, net.label(i), 2));
  }

  Metrics metrics;
  Eigen::VectorXd rho = Eigen::VectorXd::Constant(nn, cfg.initial_fraction * cfg.rho_cg);
  for (int cycle = 1; cycle <= cfg.cycles; ++cycle) {
    CycleInputs in;
    in.T = cfg.T;
    in.rho = rho;
    in.mu_nominal = Eigen::VectorXd::Zero(nn);
    in.mu_lower = Eigen::VectorXd::Zero(nn);
    in.mu_upper = Eigen::VectorXd::Zero(nn);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(nn);
    for (CellIndex i = 0; i < n; ++i) {
      if (!net.is_source(i)) continue;
      const auto k = static_cast<Eigen::Index>(i);
      // Vehicles that cannot enter a full entry cell are turned away.
      const double room = std::max(0.0, cfg.rho_cg - rho(k));
      in.mu_upper(k) = std::min(cfg.q_in * (1.0 + cfg.inflow_spread), room);
      in.mu_lower(k) = std::min(cfg.q_in, in.mu_upper(k));
      in.mu_nominal(k) = std::min(cfg.q_in * (1.0 + 0.5 * cfg.inflow_spread), in.mu_upper(k));
      mu(k) = std::min(cfg.q_in * (1.0 + cfg.inflow_spread * uniform01(inflow_rng[i])), in.mu_upper(k));
    }
    const ProblemData pd = assemble_problem(net, params, in);

    CycleMetrics cm;
    cm.cycle = cycle;
    Eigen::VectorXd f;
    Eigen::MatrixXd Q;
    Eigen::VectorXd q;
    constraint_rows(net, pd, Q, q);
    if (cfg.controller == Controller::Fixed) {
      f = fixed_time_controller(net, pd, params, in);
    } else {
      try {
        const AssembledMatrices am = build_matrices(net, pd);
        const double eps = step_size_or(am, cfg.safety, 1.0);
        if (cfg.controller == Controller::Centralized) {
          SolveOptions so;
          so.epsilon = eps;
          so.tolerance = cfg.tolerance;
          so.max_iterations = cfg.max_iterations;
          so.record_trace = so.record_eta = cycle == cfg.eta_trace_cycle;
          SolveReport rep = solve(am, pd, so);
          if (so.record_eta) {
            metrics.eta_trace = std::move(rep.eta_trace);
            metrics.step_trace = std::move(rep.step_norms);
          }
          if (rep.status != SolveStatus::Converged) {
            // A capped iterate is only usable when it already satisfies the constraints.
            const double v = max_violation(Q, q, rep.f_opt);
            if (v > kFeasibilityTol) {
              throw Error(ErrorCode::NonConvergence,
                          fmt::format("dual iteration stopped at the cap of {} (last step {:.3e}, violation {:.3e})",
                                      rep.iterations, rep.final_step_norm, v));
            }
            spdlog::warn("cycle {}: dual iteration stopped at the cap of {} (last step {:.3e})", cycle,
                         rep.iterations, rep.final_step_norm);
          }
          f = rep.f_opt;
          cm.iterations = rep.iterations;
        } else {
          DistributedOptions dopt;
          dopt.epsilon = eps;
          dopt.tolerance = cfg.tolerance;
          dopt.max_outer = cfg.max_iterations;
          dopt.seed = cfg.seed * 1000003ull + static_cast<std::uint64_t>(cycle);
          dopt.record_eta = cycle == cfg.eta_trace_cycle;
          DistributedReport rep = distributed_solve(net, pd, dopt);
          f = rep.f;
          cm.iterations = rep.outer_iterations;
          cm.d_max = rep.d_max;
          if (dopt.record_eta) metrics.eta_trace = std::move(rep.eta_trace);
        }
      } catch (const Error& e) {
        spdlog::error("cycle {}: {}; applying fixed-time flows", cycle, e.what());
        f = fixed_time_controller(net, pd, params, in);
        cm.fallback = true;
      }
    }
    cm.max_violation = max_violation(Q, q, f);
    // Dual iterates may leave flows a hair below zero; nothing negative is applied.
    f = f.cwiseMax(0.0);

    const Eigen::MatrixXd realized = sample_turning(net, turning_rng);
    Eigen::VectorXd next = step_dynamics_unchecked(rho, f, realized, mu);
    for (Eigen::Index i = 0; i < nn; ++i) {
      if (next(i) < 0.0) {
        if (next(i) < -kFeasibilityTol) {
          spdlog::warn("cycle {}: cell {} would hold {:.3e} vehicles; clamped to 0", cycle,
                       net.label(static_cast<CellIndex>(i)), next(i));
          ++metrics.clamped_cells;
        }
        next(i) = 0.0;
      }
      next(i) = std::min(next(i), cfg.rho_cg);
    }
    rho = next;
    cm.avg_cost = average_distribution_cost(params, rho);
    cm.total_outflow = total_outflow(net, f);
    metrics.cycles.push_back(cm);
  }
  return metrics;
}

Table1Row table1_row(int m, int n, double tol, std::uint64_t seed, double ratio_uncertainty) {
  const Network net = grid_network(m, n, GridParams{ratio_uncertainty});
  const std::size_t cells = net.num_cells();
  const auto nn = static_cast<Eigen::Index>(cells);

  SimConfig cfg;
  cfg.m = m;
  cfg.n = n;
  cfg.q_in = cfg.rho_cg / 3.0;
  const std::vector<CellParams> params = experiment_params(net, cfg);
  Eigen::VectorXd w(nn), a(nn), x0 = Eigen::VectorXd::Zero(nn);
  for (CellIndex i = 0; i < cells; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    w(k) = params[i].w;
    a(k) = params[i].a;
    if (net.is_source(i)) x0(k) = cfg.q_in * (1.0 + 0.5 * cfg.inflow_spread);
  }

  const kernels::RowSparse r = nominal_sparse(net);
  const kernels::RowSparse rt = nominal_sparse_transposed(net);
  const TurningMatrices tm = turning_matrices(net);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(tm.g);
  // The two recursions at eta = 0: zeta = R zeta + w and f = R^T f + x0 - x*(0).
  const Eigen::VectorXd zeta_star = lu.solve(w);
  const Eigen::VectorXd flow_const = x0 - zeta_star.cwiseQuotient(2.0 * a);
  const Eigen::VectorXd flow_star = Eigen::PartialPivLU<Eigen::MatrixXd>(tm.g.transpose()).solve(flow_const);

  auto naive = [&](const kernels::RowSparse& m_op, const Eigen::VectorXd& c, const Eigen::VectorXd& exact) {
    const double scale = std::max(1.0, exact.lpNorm<Eigen::Infinity>());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(nn), next(nn);
    std::size_t sweeps = 0;
    while ((x - exact).lpNorm<Eigen::Infinity>() > tol * scale && sweeps < 100'000) {
      kernels::affine_sweep(m_op, std::span<const double>(x.data(), cells), std::span<const double>(c.data(), cells),
                            std::span<double>(next.data(), cells));
      x.swap(next);
      ++sweeps;
    }
    return sweeps;
  };

  Table1Row row;
  row.m = m;
  row.n = n;
  row.cells = cells;
  row.naive_zeta = naive(r, w, zeta_star);
  row.naive_flow = naive(rt, flow_const, flow_star);

  // D at matched accuracy: the rank threshold is tightened until every final
  // value is within tol * scale of the exact solution.
  std::mt19937_64 rng(seed);
  Eigen::VectorXd zeta_start(nn), flow_start(nn);
  for (Eigen::Index i = 0; i < nn; ++i) zeta_start(i) = uniform01(rng);
  for (Eigen::Index i = 0; i < nn; ++i) flow_start(i) = uniform01(rng);
  auto apply_r = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return r * x; };
  auto apply_rt = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return rt * x; };
  auto detect = [&](const AffineApply& apply, const Eigen::VectorXd& c, const Eigen::VectorXd& start,
                    const Eigen::VectorXd& exact, double scale_tol, std::size_t& d, double& err) {
    FinalValueOptions opts;
    opts.scale_tol = scale_tol;
    d = 0;
    err = 0.0;
    const auto results = run_to_final_all(apply, c, start, opts);
    for (std::size_t i = 0; i < cells; ++i) {
      d = std::max(d, results[i].observations);
      err = std::max(err, std::abs(results[i].y_inf - exact(static_cast<Eigen::Index>(i))));
    }
    return err <= tol * std::max(1.0, exact.lpNorm<Eigen::Infinity>());
  };
  for (double st : {tol, 0.3 * tol, 0.1 * tol, 0.03 * tol, 0.01 * tol, 0.003 * tol, 0.001 * tol, 0.0}) {
    row.scale_tol = st;
    const bool zeta_ok = detect(apply_r, w, zeta_start, zeta_star, st, row.d_zeta, row.zeta_error);
    const bool flow_ok = detect(apply_rt, flow_const, flow_start, flow_star, st, row.d_flow, row.flow_error);
    if (zeta_ok && flow_ok) break;
  }
  return row;
}

std::vector<Table1Row> table1_experiment(const std::vector<std::pair<int, int>>& dims, double tol,
                                         std::uint64_t seed) {
  std::vector<Table1Row> rows;
  for (const auto& [m, n] : dims) rows.push_back(table1_row(m, n, tol, seed));
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) { return fmt::format("{:.10g}", v); }

}  // namespace

std::string metrics_csv(const Metrics& metrics) {
  std::string out = "cycle,avg_cost,total_outflow,iterations\r\n";
  for (const auto& c : metrics.cycles) {
    out += fmt::format("{},{},{},{}\r\n", c.cycle, csv_field(num(c.avg_cost)), csv_field(num(c.total_outflow)),
                       c.iterations);
  }
  return out;
}

std::string table1_csv(const std::vector<Table1Row>& rows) {
  std::string out =
      "m,n,cells,naive_sweeps,d_max,naive_zeta,naive_flow,d_zeta,d_flow,scale_tol,zeta_error,flow_error\r\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\r\n", r.m, r.n, r.cells, r.naive(), r.d_max(), r.naive_zeta,
                       r.naive_flow, r.d_zeta, r.d_flow, num(r.scale_tol), num(r.zeta_error), num(r.flow_error));
  }
  return out;
}

std::string eta_trace_csv(const Metrics& metrics) {
  std::string out = "iteration,step_norm";
  const Eigen::Index width = metrics.eta_trace.empty() ? 0 : metrics.eta_trace.front().size();
  static constexpr const char* kNames[] = {"lambda", "theta", "alpha", "beta", "nu", "gamma"};
  for (Eigen::Index k = 0; k < width; ++k) {
    out += fmt::format(",{}_{}", kNames[k % kMultipliersPerCell], k / kMultipliersPerCell);
  }
  out += "\r\n";
  for (std::size_t it = 0; it < metrics.eta_trace.size(); ++it) {
    const double step = it == 0 || it - 1 >= metrics.step_trace.size() ? 0.0 : metrics.step_trace[it - 1];
    out += fmt::format("{},{}", it, num(step));
    for (Eigen::Index k = 0; k < width; ++k) out += "," + num(metrics.eta_trace[it](k));
    out += "\r\n";
  }
  return out;
}

void emit_outputs(const Metrics& metrics, const SimConfig& cfg, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  write_text_file(dir / "metrics.csv", metrics_csv(metrics));
  nlohmann::json manifest;
  manifest["config"] = to_json(cfg);
  manifest["cells"] = grid_cell_count(cfg.m, cfg.n);
  manifest["clamped_cells"] = metrics.clamped_cells;
  manifest["fallback_cycles"] = std::count_if(metrics.cycles.begin(), metrics.cycles.end(),
                                              [](const CycleMetrics& c) { return c.fallback; });
  manifest["mean_avg_cost"] = metrics.mean_avg_cost();
  manifest["mean_total_outflow"] = metrics.mean_outflow();
  manifest["versions"] = {{"ctmflow", "1.0.0"},
                          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                                                EIGEN_MINOR_VERSION)},
                          {"fmt", FMT_VERSION},
                          {"compiler", __VERSION__}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  if (!metrics.eta_trace.empty()) write_text_file(dir / "eta_trace.csv", eta_trace_csv(metrics));
}

}  // namespace ctmflow
