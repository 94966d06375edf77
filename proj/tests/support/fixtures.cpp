#include "fixtures.hpp"

#include <algorithm>
#include <string>

namespace ctmflow::fixtures {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<TurnSpec> split(std::mt19937_64& rng, const std::vector<long>& targets, double spread) {
  std::vector<double> weight(targets.size());
  double total = 0.0;
  for (auto& w : weight) total += (w = uniform(rng, 0.2, 1.0));
  std::vector<TurnSpec> turns;
  double used = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double r = k + 1 == targets.size() ? 1.0 - used : weight[k] / total;
    used += r;
    turns.push_back(TurnSpec{targets[k], r, std::max(0.0, r * (1.0 - spread)), std::min(1.0, r * (1.0 + spread))});
  }
  return turns;
}

}  // namespace

NetworkDescription tandem(int cells) {
  NetworkDescription d;
  for (int i = 1; i < cells; ++i) d.intersections.push_back("J" + std::to_string(i));
  for (int i = 1; i <= cells; ++i) {
    CellSpec c;
    c.id = i;
    c.source = i == 1 ? kExteriorName : "J" + std::to_string(i - 1);
    c.sink = i == cells ? kExteriorName : "J" + std::to_string(i);
    if (i < cells) c.turns.push_back(TurnSpec{i + 1, 1.0, 1.0, 1.0});
    d.cells.push_back(c);
  }
  return d;
}

NetworkDescription random_network(std::mt19937_64& rng, int intersections, int internal_cells,
                                  double ratio_uncertainty) {
  NetworkDescription d;
  auto name = [](int j) { return "J" + std::to_string(j); };
  for (int j = 0; j < intersections; ++j) d.intersections.push_back(name(j));
  long next_id = 1;
  std::vector<long> entry(intersections), exit(intersections);
  for (int j = 0; j < intersections; ++j) {
    entry[j] = next_id;
    d.cells.push_back(CellSpec{next_id++, kExteriorName, name(j), {}});
    exit[j] = next_id;
    d.cells.push_back(CellSpec{next_id++, name(j), kExteriorName, {}});
  }
  std::uniform_int_distribution<int> pick(0, intersections - 1);
  for (int k = 0; k < internal_cells && intersections > 1; ++k) {
    const int from = pick(rng);
    int to = pick(rng);
    if (to == from) to = (to + 1) % intersections;
    d.cells.push_back(CellSpec{next_id++, name(from), name(to), {}});
  }
  for (auto& c : d.cells) {
    if (c.sink == kExteriorName) continue;
    const int j = std::stoi(c.sink.substr(1));
    std::vector<long> departures;
    for (const auto& o : d.cells) {
      if (o.source == c.sink && o.id != c.id) departures.push_back(o.id);
    }
    std::vector<long> targets;
    for (long t : departures) {
      if (c.source == kExteriorName || t == exit[j] || std::bernoulli_distribution(0.6)(rng)) targets.push_back(t);
    }
    c.turns = split(rng, targets, ratio_uncertainty);
  }
  return d;
}

Instance random_instance(std::mt19937_64& rng, int max_cells) {
  const int intersections = std::uniform_int_distribution<int>(1, std::max(1, (max_cells - 1) / 3))(rng);
  const int room = max_cells - 2 * intersections;
  const int internal = intersections > 1 ? std::uniform_int_distribution<int>(0, room)(rng) : 0;
  Network net = Network::build(random_network(rng, intersections, internal));
  const std::size_t n = net.num_cells();
  const auto nn = static_cast<Eigen::Index>(n);

  std::vector<CellParams> params(n);
  CycleInputs in;
  in.T = 90.0;
  in.rho.resize(nn);
  in.mu_nominal = in.mu_lower = in.mu_upper = Eigen::VectorXd::Zero(nn);
  for (CellIndex i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    CellParams& p = params[i];
    p.rho_cg = uniform(rng, 150.0, 400.0);
    p.rho_cr = uniform(rng, 0.25, 0.6) * p.rho_cg;
    p.omega = uniform(rng, 0.2, 1.0);
    p.a = uniform(rng, 0.3, 1.0);
    p.b = uniform(rng, -5.0, 5.0);
    p.c = 0.0;
    p.w = uniform(rng, -20.0, 0.0);
    p.demand_supply = Trapezoid{uniform(rng, 30.0, 200.0)};
    in.rho(k) = uniform(rng, 0.0, 0.6) * p.rho_cg;
    if (net.is_source(i)) {
      const double q = uniform(rng, 0.0, 0.3) * p.rho_cg;
      in.mu_lower(k) = q;
      in.mu_nominal(k) = 1.05 * q;
      in.mu_upper(k) = 1.1 * q;
    }
  }
  ProblemData pd = assemble_problem(net, params, in);
  return Instance{std::move(net), std::move(params), std::move(in), std::move(pd)};
}

Instance grid_cycle(double rho, double q_in, int m, int n) {
  Network net = grid_network(m, n);
  SimConfig cfg;
  cfg.m = m;
  cfg.n = n;
  cfg.q_in = q_in;
  std::vector<CellParams> params = experiment_params(net, cfg);
  const auto nn = static_cast<Eigen::Index>(net.num_cells());
  CycleInputs in;
  in.T = cfg.T;
  in.rho = Eigen::VectorXd::Constant(nn, rho);
  in.mu_nominal = in.mu_lower = in.mu_upper = Eigen::VectorXd::Zero(nn);
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    if (!net.is_source(i)) continue;
    const auto k = static_cast<Eigen::Index>(i);
    in.mu_upper(k) = std::min(1.1 * q_in, cfg.rho_cg - rho);
    in.mu_lower(k) = std::min(q_in, in.mu_upper(k));
    in.mu_nominal(k) = std::min(1.05 * q_in, in.mu_upper(k));
  }
  ProblemData pd = assemble_problem(net, params, in);
  return Instance{std::move(net), std::move(params), std::move(in), std::move(pd)};
}

}  // namespace ctmflow::fixtures
