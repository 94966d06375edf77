#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ctmflow/ctm.hpp"
#include "ctmflow/harness.hpp"
#include "ctmflow/network.hpp"
#include "ctmflow/qp_core.hpp"

namespace ctmflow::fixtures {

/// 1 -> 2 -> ... -> n -> O with r = 1 along the chain.
NetworkDescription tandem(int cells);

/// Random network that satisfies every build-time rule: each intersection has
/// an entry and an exit cell, entry cells turn into every departure, other
/// cells into a random subset that always contains the local exit.
NetworkDescription random_network(std::mt19937_64& rng, int intersections, int internal_cells,
                                  double ratio_uncertainty = 0.05);

struct Instance {
  Network net;
  std::vector<CellParams> params;
  CycleInputs inputs;
  ProblemData pd;
};

/// Random cycle with feasible bounds (f = 0 always satisfies them).
Instance random_instance(std::mt19937_64& rng, int max_cells = 10);

/// One cycle of the 2x2 grid experiment with every cell at `rho` and entries at q_in.
Instance grid_cycle(double rho, double q_in = 100.0, int m = 2, int n = 2);

}  // namespace ctmflow::fixtures
