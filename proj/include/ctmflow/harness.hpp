#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctmflow/ctm.hpp"
#include "ctmflow/network.hpp"

namespace ctmflow {

enum class Controller { Fixed, Centralized, Distributed };

std::string to_string(Controller c);
Controller controller_from_string(const std::string& name);  ///< throws InvalidParams

struct SimConfig {
  int m = 2;
  int n = 2;
  int cycles = 100;
  double T = 90.0;
  double q_in = 100.0;
  std::uint64_t seed = 1;
  double ratio_uncertainty = 0.05;
  Controller controller = Controller::Centralized;
  double safety = 0.9;
  double tolerance = 0.0;  ///< 0: scale-aware default
  int max_iterations = 50'000;

  double rho_cg = 300.0;
  double rho_cr_fraction = 0.4;  ///< rho_cr = this * rho_cg
  double omega = 0.4;            ///< seconds of green per vehicle
  double inflow_spread = 0.1;    ///< mu = q_in (1 + spread U[0,1])
  double initial_fraction = 0.0; ///< every cell starts with this * rho_cg vehicles

  int eta_trace_cycle = 0;  ///< 1-based cycle whose multiplier trajectory is kept (0: none)
};

/// Throws InvalidParams.
void validate(const SimConfig& cfg);

/// The experiment's cell records: a = 0.55 on entry cells, 0.5 elsewhere;
/// w = -20 on exit cells, -10 elsewhere; b = c = 0; trapezoid capacity T / v.
std::vector<CellParams> experiment_params(const Network& net, const SimConfig& cfg);

/// Equal green split per intersection, capped by demand and available
/// vehicles, then scaled down once so no receiving cell is over-filled.
Eigen::VectorXd fixed_time_controller(const Network& net, const ProblemData& pd,
                                      const std::vector<CellParams>& params, const CycleInputs& inputs);

/// sum a rho^2 / sum rho (0 for an empty network).
double average_distribution_cost(const std::vector<CellParams>& params, const Eigen::VectorXd& rho);
double total_outflow(const Network& net, const Eigen::VectorXd& f);

struct CycleMetrics {
  int cycle = 0;
  double avg_cost = 0.0;
  double total_outflow = 0.0;
  int iterations = 0;
  std::size_t d_max = 0;
  double max_violation = 0.0;  ///< of the applied flow against that cycle's constraints
  bool fallback = false;       ///< solver failed and the fixed-time flow was applied
};

struct Metrics {
  std::vector<CycleMetrics> cycles;
  std::vector<Eigen::VectorXd> eta_trace;  ///< for SimConfig::eta_trace_cycle
  std::vector<double> step_trace;          ///< max |eta(k+1) - eta(k)| for the same cycle
  int clamped_cells = 0;                   ///< negative volumes clamped to zero

  double mean_avg_cost() const;
  double mean_outflow() const;
};

/// Realised turning ratios: each entry drawn in [lower, upper], then the row
/// is shifted by a common amount (clamped to the bounds) so it sums to 1.
/// One generator per cell.
Eigen::MatrixXd sample_turning(const Network& net, std::vector<std::mt19937_64>& per_cell);

Metrics run_simulation(const SimConfig& cfg);

struct Table1Row {
  int m = 0;
  int n = 0;
  std::size_t cells = 0;
  std::size_t naive_zeta = 0;  ///< sweeps from 0 until |x - x*|_inf <= tol max(1, |x*|_inf)
  std::size_t naive_flow = 0;
  std::size_t d_zeta = 0;  ///< largest per-cell observation count of the final-value detector
  std::size_t d_flow = 0;
  double scale_tol = 0.0;    ///< detector rank threshold that reached the accuracy
  double zeta_error = 0.0;   ///< max |final value - exact| over cells
  double flow_error = 0.0;

  std::size_t naive() const { return std::max(naive_zeta, naive_flow); }
  std::size_t d_max() const { return std::max(d_zeta, d_flow); }
};

Table1Row table1_row(int m, int n, double tol, std::uint64_t seed, double ratio_uncertainty = 0.05);
std::vector<Table1Row> table1_experiment(const std::vector<std::pair<int, int>>& dims, double tol,
                                         std::uint64_t seed = 1);

/// RFC 4180 CSV with columns cycle, avg_cost, total_outflow, iterations.
std::string metrics_csv(const Metrics& metrics);
std::string table1_csv(const std::vector<Table1Row>& rows);
std::string eta_trace_csv(const Metrics& metrics);

/// Writes <dir>/metrics.csv, <dir>/manifest.json and, when traced, <dir>/eta_trace.csv.
/// Throws IoError.
void emit_outputs(const Metrics& metrics, const SimConfig& cfg, const std::filesystem::path& dir);

}  // namespace ctmflow
