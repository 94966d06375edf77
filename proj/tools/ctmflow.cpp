// Command-line front end.
//
//   ctmflow simulate   --m 2 --n 2 --cycles 100 --q-in 100 --controller centralized --out runs/a
//   ctmflow table1     --dims 2x2,2x5,5x5,5x10 --tol 1e-9 [--out table1.csv]
//   ctmflow solve-once --scenario s.json [--controller distributed] [--out result.json]
//   ctmflow gen-grid   --m 2 --n 2 [--scenario] [--out grid.json]
//
// Exit codes: 0 success, 2 solver failure, 3 bad configuration or input.
// CTMFLOW_LOG sets the log level (trace, debug, info, warn, error, off).

#include <cstdlib>
#include <iostream>
#include <regex>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ctmflow/centralized.hpp"
#include "ctmflow/distributed.hpp"
#include "ctmflow/error.hpp"
#include "ctmflow/harness.hpp"
#include "ctmflow/io.hpp"
#include "ctmflow/qp_core.hpp"

namespace {

using namespace ctmflow;

constexpr int kSolverFailure = 2;
constexpr int kConfigError = 3;

bool is_solver_failure(ErrorCode c) {
  switch (c) {
    case ErrorCode::SingularG:
    case ErrorCode::Infeasible:
    case ErrorCode::DegenerateNorms:
    case ErrorCode::NoConvergenceDetected:
    case ErrorCode::ZetaNotFinalized:
    case ErrorCode::ProtocolViolation:
    case ErrorCode::NonConvergence:
    case ErrorCode::NegativeResultingVolume:
      return true;
    default:
      return false;
  }
}

void add_sim_flags(CLI::App* app, SimConfig& cfg, std::string& controller) {
  app->add_option("--m", cfg.m, "grid rows")->capture_default_str();
  app->add_option("--n", cfg.n, "grid columns")->capture_default_str();
  app->add_option("--T", cfg.T, "cycle length in seconds")->capture_default_str();
  app->add_option("--q-in", cfg.q_in, "inflow level per entry cell and cycle")->capture_default_str();
  app->add_option("--seed", cfg.seed)->capture_default_str();
  app->add_option("--ratio-uncertainty", cfg.ratio_uncertainty, "relative width of the turning-ratio bounds")
      ->capture_default_str();
  app->add_option("--controller", controller, "fixed, centralized or distributed")->capture_default_str();
  app->add_option("--safety", cfg.safety, "step size as a fraction of the convergence bound")->capture_default_str();
  app->add_option("--tolerance", cfg.tolerance, "dual stopping threshold (0: scale-aware default)")
      ->capture_default_str();
  app->add_option("--max-iterations", cfg.max_iterations)->capture_default_str();
  app->add_option("--rho-cg", cfg.rho_cg)->capture_default_str();
  app->add_option("--rho-cr-fraction", cfg.rho_cr_fraction)->capture_default_str();
  app->add_option("--omega", cfg.omega, "seconds of green per vehicle")->capture_default_str();
  app->add_option("--inflow-spread", cfg.inflow_spread)->capture_default_str();
  app->add_option("--initial-fraction", cfg.initial_fraction)->capture_default_str();
}

std::vector<std::pair<int, int>> parse_dims(const std::string& text) {
  std::vector<std::pair<int, int>> dims;
  const std::regex item(R"((\d+)x(\d+))");
  for (std::sregex_iterator it(text.begin(), text.end(), item), end; it != end; ++it) {
    dims.emplace_back(std::stoi((*it)[1]), std::stoi((*it)[2]));
  }
  if (dims.empty()) throw Error(ErrorCode::InvalidParams, fmt::format("no grid sizes in '{}'", text));
  return dims;
}

void write_or_print(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text_file(out, text);
  }
}

int run_solve_once(const std::string& scenario_path, const std::string& controller, double safety,
                   double tolerance, std::uint64_t seed, const std::string& out) {
  const Scenario s = scenario_from_json(read_json_file(scenario_path));
  const Network net = Network::build(s.network);
  const ProblemData pd = assemble_problem(net, s.params, s.inputs);
  const AssembledMatrices am = build_matrices(net, pd);
  const double eps = step_size(am, safety);

  nlohmann::json result;
  Eigen::VectorXd f;
  if (controller == "distributed") {
    DistributedOptions opts;
    opts.epsilon = eps;
    opts.tolerance = tolerance;
    opts.seed = seed;
    const DistributedReport rep = distributed_solve(net, pd, opts);
    f = rep.f;
    result["outer_iterations"] = rep.outer_iterations;
    result["rounds"] = rep.rounds;
    result["d_max"] = rep.d_max;
    result["learnings"] = rep.learnings;
  } else if (controller == "centralized") {
    SolveOptions opts;
    opts.epsilon = eps;
    opts.tolerance = tolerance;
    const SolveReport rep = solve(am, pd, opts);
    if (rep.status != SolveStatus::Converged) {
      throw Error(ErrorCode::NonConvergence, fmt::format("no convergence in {} iterations", rep.iterations));
    }
    f = rep.f_opt;
    result["iterations"] = rep.iterations;
    result["kkt_worst"] = rep.kkt.worst();
  } else {
    throw Error(ErrorCode::InvalidParams, fmt::format("solve-once needs centralized or distributed, got '{}'",
                                                      controller));
  }
  const Eigen::VectorXd x = pd.x0 - am.G.transpose() * f;
  result["epsilon"] = eps;
  result["objective"] = objective(pd, x, f);
  result["max_violation"] = max_violation(am.Q, am.q, f);
  nlohmann::json cells = nlohmann::json::array();
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    cells.push_back({{"id", net.label(i)}, {"f", f(k)}, {"x", x(k)}});
  }
  result["cells"] = cells;
  write_or_print(out, result.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* level = std::getenv("CTMFLOW_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::warn);
  }

  CLI::App app{"Cycle-by-cycle traffic-flow control on cell transmission networks"};
  app.require_subcommand(1);

  SimConfig cfg;
  std::string controller = to_string(cfg.controller);
  std::string out;

  auto* sim = app.add_subcommand("simulate", "run the multi-cycle grid experiment");
  add_sim_flags(sim, cfg, controller);
  sim->add_option("--cycles", cfg.cycles)->capture_default_str();
  sim->add_option("--eta-trace-cycle", cfg.eta_trace_cycle, "cycle whose multiplier trajectory is written")
      ->capture_default_str();
  sim->add_option("--out", out, "output directory")->required();

  std::string dims = "2x2,2x5,5x5,5x10";
  double tol = 1e-9;
  auto* t1 = app.add_subcommand("table1", "observation counts with and without final-value detection");
  t1->add_option("--dims", dims, "comma separated grid sizes like 2x2,5x10")->capture_default_str();
  t1->add_option("--tol", tol)->capture_default_str();
  t1->add_option("--seed", cfg.seed)->capture_default_str();
  t1->add_option("--out", out, "CSV file (stdout when omitted)");

  std::string scenario;
  auto* once = app.add_subcommand("solve-once", "solve a single cycle described by a scenario document");
  once->add_option("--scenario", scenario)->required()->check(CLI::ExistingFile);
  once->add_option("--controller", controller)->capture_default_str();
  once->add_option("--safety", cfg.safety)->capture_default_str();
  once->add_option("--tolerance", cfg.tolerance)->capture_default_str();
  once->add_option("--seed", cfg.seed)->capture_default_str();
  once->add_option("--out", out, "JSON file (stdout when omitted)");

  bool as_scenario = false;
  auto* gen = app.add_subcommand("gen-grid", "write the grid network (or a full cycle scenario) as JSON");
  add_sim_flags(gen, cfg, controller);
  gen->add_flag("--scenario", as_scenario, "include cell parameters and cycle inputs");
  gen->add_option("--out", out, "JSON file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*sim) {
      cfg.controller = controller_from_string(controller);
      const Metrics metrics = run_simulation(cfg);
      emit_outputs(metrics, cfg, out);
      std::cout << fmt::format("{} cycles, mean avg cost {:.4f}, mean outflow {:.4f}\n", metrics.cycles.size(),
                               metrics.mean_avg_cost(), metrics.mean_outflow());
      const bool any_fallback = std::any_of(metrics.cycles.begin(), metrics.cycles.end(),
                                            [](const CycleMetrics& c) { return c.fallback; });
      return any_fallback ? kSolverFailure : 0;
    }
    if (*t1) {
      write_or_print(out, table1_csv(table1_experiment(parse_dims(dims), tol, cfg.seed)));
      return 0;
    }
    if (*once) return run_solve_once(scenario, controller, cfg.safety, cfg.tolerance, cfg.seed, out);
    if (*gen) {
      validate(cfg);
      const nlohmann::json doc = as_scenario
                                     ? to_json(experiment_scenario(cfg))
                                     : to_json(grid_description(cfg.m, cfg.n, GridParams{cfg.ratio_uncertainty}));
      write_or_print(out, doc.dump(2) + "\n");
      return 0;
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return is_solver_failure(e.code()) ? kSolverFailure : kConfigError;
  }
  return 0;
}
