#pragma once

// JSON documents.
//
// Network:
//   {"intersections": ["I1", ...],            optional, fixes the node order
//    "cells": [{"id": 1, "source": "O", "sink": "I1",
//               "turns": [{"to": 2, "nominal": 0.33, "lower": 0.31, "upper": 0.35}, ...]}, ...]}
// Scenario (one cycle):
//   {"network": {...},
//    "cells": [{"id": 1, "rho_cg": 300, "rho_cr": 120, "omega": 0.4, "a": 0.55, "b": 0, "c": 0, "w": -10,
//               "demand_supply": {"type": "trapezoid", "capacity": 675}}, ...],
//    "inputs": {"T": 90, "rho": [...], "mu_nominal": [...], "mu_lower": [...], "mu_upper": [...]}}
// A tabulated diagram is {"type": "tabulated", "rho": [...], "demand": [...], "supply": [...]}.
// Vectors in "inputs" follow the order of "cells" in the network.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctmflow/ctm.hpp"
#include "ctmflow/harness.hpp"
#include "ctmflow/network.hpp"

namespace ctmflow {

nlohmann::json to_json(const NetworkDescription& d);
NetworkDescription network_from_json(const nlohmann::json& j);  ///< throws ParseError

struct Scenario {
  NetworkDescription network;
  std::vector<CellParams> params;
  CycleInputs inputs;
};

nlohmann::json to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);  ///< throws ParseError

nlohmann::json to_json(const SimConfig& cfg);

nlohmann::json read_json_file(const std::filesystem::path& path);  ///< throws IoError / ParseError
void write_text_file(const std::filesystem::path& path, const std::string& text);  ///< throws IoError

/// A scenario for cycle 0 of the grid experiment (empty network, nominal inflows).
Scenario experiment_scenario(const SimConfig& cfg);

}  // namespace ctmflow
