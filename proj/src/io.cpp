#include "ctmflow/io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ctmflow/error.hpp"

namespace ctmflow {

using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& why) { throw Error(ErrorCode::ParseError, why); }

template <class T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) parse_fail(fmt::format("missing field '{}'", key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    parse_fail(fmt::format("field '{}': {}", key, e.what()));
  }
}

template <class T>
T field_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? field<T>(j, key) : fallback;
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j, const char* key, std::size_t n) {
  const auto values = field<std::vector<double>>(j, key);
  if (values.size() != n) {
    parse_fail(fmt::format("'{}' has {} entries, expected {}", key, values.size(), n));
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(n));
}

json diagram_json(const DemandSupplySpec& spec) {
  if (const auto* t = std::get_if<Trapezoid>(&spec)) return {{"type", "trapezoid"}, {"capacity", t->capacity}};
  const auto& tab = std::get<Tabulated>(spec);
  return {{"type", "tabulated"}, {"rho", tab.rho}, {"demand", tab.demand}, {"supply", tab.supply}};
}

DemandSupplySpec diagram_from(const json& j) {
  const auto type = field<std::string>(j, "type");
  if (type == "trapezoid") return Trapezoid{field<double>(j, "capacity")};
  if (type == "tabulated") {
    return Tabulated{field<std::vector<double>>(j, "rho"), field<std::vector<double>>(j, "demand"),
                     field<std::vector<double>>(j, "supply")};
  }
  parse_fail(fmt::format("unknown demand_supply type '{}'", type));
}

}  // namespace

json to_json(const NetworkDescription& d) {
  json cells = json::array();
  for (const auto& c : d.cells) {
    json turns = json::array();
    for (const auto& t : c.turns) {
      turns.push_back({{"to", t.to}, {"nominal", t.nominal}, {"lower", t.lower}, {"upper", t.upper}});
    }
    cells.push_back({{"id", c.id}, {"source", c.source}, {"sink", c.sink}, {"turns", turns}});
  }
  json out = {{"cells", cells}};
  if (!d.intersections.empty()) out["intersections"] = d.intersections;
  return out;
}

NetworkDescription network_from_json(const json& j) {
  NetworkDescription d;
  d.intersections = field_or<std::vector<std::string>>(j, "intersections", {});
  const json cells = field<json>(j, "cells");
  if (!cells.is_array()) parse_fail("'cells' must be an array");
  for (const auto& c : cells) {
    CellSpec spec;
    spec.id = field<long>(c, "id");
    spec.source = field<std::string>(c, "source");
    spec.sink = field<std::string>(c, "sink");
    for (const auto& t : field_or<json>(c, "turns", json::array())) {
      const double nominal = field<double>(t, "nominal");
      spec.turns.push_back(TurnSpec{field<long>(t, "to"), nominal, field_or<double>(t, "lower", nominal),
                                    field_or<double>(t, "upper", nominal)});
    }
    d.cells.push_back(std::move(spec));
  }
  return d;
}

json to_json(const Scenario& s) {
  json cells = json::array();
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const CellParams& p = s.params[i];
    cells.push_back({{"id", s.network.cells.at(i).id},
                     {"rho_cg", p.rho_cg},
                     {"rho_cr", p.rho_cr},
                     {"omega", p.omega},
                     {"a", p.a},
                     {"b", p.b},
                     {"c", p.c},
                     {"w", p.w},
                     {"demand_supply", diagram_json(p.demand_supply)}});
  }
  return {{"network", to_json(s.network)},
          {"cells", cells},
          {"inputs",
           {{"T", s.inputs.T},
            {"rho", vec(s.inputs.rho)},
            {"mu_nominal", vec(s.inputs.mu_nominal)},
            {"mu_lower", vec(s.inputs.mu_lower)},
            {"mu_upper", vec(s.inputs.mu_upper)}}}};
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  s.network = network_from_json(field<json>(j, "network"));
  const std::size_t n = s.network.cells.size();
  const json cells = field<json>(j, "cells");
  if (!cells.is_array() || cells.size() != n) {
    parse_fail(fmt::format("'cells' must list parameters for all {} network cells", n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const json& c = cells[i];
    if (c.contains("id") && field<long>(c, "id") != s.network.cells[i].id) {
      parse_fail(fmt::format("cell parameters #{} belong to id {}, expected {}", i, field<long>(c, "id"),
                             s.network.cells[i].id));
    }
    CellParams p;
    p.rho_cg = field_or<double>(c, "rho_cg", p.rho_cg);
    p.rho_cr = field_or<double>(c, "rho_cr", p.rho_cr);
    p.omega = field_or<double>(c, "omega", p.omega);
    p.a = field_or<double>(c, "a", p.a);
    p.b = field_or<double>(c, "b", p.b);
    p.c = field_or<double>(c, "c", p.c);
    p.w = field_or<double>(c, "w", p.w);
    p.demand_supply = diagram_from(field<json>(c, "demand_supply"));
    s.params.push_back(std::move(p));
  }
  const json in = field<json>(j, "inputs");
  s.inputs.T = field<double>(in, "T");
  s.inputs.rho = vec_from(in, "rho", n);
  s.inputs.mu_nominal = vec_from(in, "mu_nominal", n);
  s.inputs.mu_lower = vec_from(in, "mu_lower", n);
  s.inputs.mu_upper = vec_from(in, "mu_upper", n);
  return s;
}

json to_json(const SimConfig& cfg) {
  return {{"m", cfg.m},
          {"n", cfg.n},
          {"cycles", cfg.cycles},
          {"T", cfg.T},
          {"q_in", cfg.q_in},
          {"seed", cfg.seed},
          {"ratio_uncertainty", cfg.ratio_uncertainty},
          {"controller", to_string(cfg.controller)},
          {"safety", cfg.safety},
          {"tolerance", cfg.tolerance},
          {"max_iterations", cfg.max_iterations},
          {"rho_cg", cfg.rho_cg},
          {"rho_cr_fraction", cfg.rho_cr_fraction},
          {"omega", cfg.omega},
          {"inflow_spread", cfg.inflow_spread},
          {"initial_fraction", cfg.initial_fraction},
          {"eta_trace_cycle", cfg.eta_trace_cycle}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    parse_fail(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, fmt::format("write to {} failed", path.string()));
}

Scenario experiment_scenario(const SimConfig& cfg) {
  validate(cfg);
  Scenario s;
  s.network = grid_description(cfg.m, cfg.n, GridParams{cfg.ratio_uncertainty});
  const Network net = Network::build(s.network);
  s.params = experiment_params(net, cfg);
  const auto n = static_cast<Eigen::Index>(net.num_cells());
  s.inputs.T = cfg.T;
  s.inputs.rho = Eigen::VectorXd::Constant(n, cfg.initial_fraction * cfg.rho_cg);
  s.inputs.mu_nominal = s.inputs.mu_lower = s.inputs.mu_upper = Eigen::VectorXd::Zero(n);
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    if (!net.is_source(i)) continue;
    const auto k = static_cast<Eigen::Index>(i);
    const double room = cfg.rho_cg - s.inputs.rho(k);
    s.inputs.mu_upper(k) = std::min(cfg.q_in * (1.0 + cfg.inflow_spread), room);
    s.inputs.mu_lower(k) = std::min(cfg.q_in, s.inputs.mu_upper(k));
    s.inputs.mu_nominal(k) = std::min(cfg.q_in * (1.0 + 0.5 * cfg.inflow_spread), s.inputs.mu_upper(k));
  }
  return s;
}

}  // namespace ctmflow
