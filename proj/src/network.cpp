#include "ctmflow/network.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "ctmflow/error.hpp"

namespace ctmflow {

namespace {

constexpr double kRowSumTol = 1e-9;

void sort_unique(std::vector<CellIndex>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

std::vector<bool> reach(const std::vector<std::vector<CellIndex>>& adjacency,
                        const std::vector<CellIndex>& seeds) {
  std::vector<bool> seen(adjacency.size(), false);
  std::deque<CellIndex> queue;
  for (CellIndex s : seeds) {
    if (!seen[s]) {
      seen[s] = true;
      queue.push_back(s);
    }
  }
  while (!queue.empty()) {
    const CellIndex u = queue.front();
    queue.pop_front();
    for (CellIndex v : adjacency[u]) {
      if (!seen[v]) {
        seen[v] = true;
        queue.push_back(v);
      }
    }
  }
  return seen;
}

}  // namespace

Network Network::build(const NetworkDescription& description) {
  Network net;
  const std::size_t n = description.cells.size();

  std::map<std::string, int> node_index;
  for (const auto& name : description.intersections) {
    if (name == kExteriorName) throw Error(ErrorCode::ParseError, "intersection list names the exterior node");
    if (!node_index.contains(name)) {
      node_index.emplace(name, static_cast<int>(net.intersection_names_.size()));
      net.intersection_names_.push_back(name);
    }
  }
  const bool explicit_nodes = !description.intersections.empty();
  auto resolve = [&](const std::string& name) -> NodeId {
    if (name == kExteriorName) return kExterior;
    auto it = node_index.find(name);
    if (it != node_index.end()) return NodeId{it->second};
    if (explicit_nodes) throw Error(ErrorCode::ParseError, fmt::format("undeclared node '{}'", name));
    const int id = static_cast<int>(net.intersection_names_.size());
    node_index.emplace(name, id);
    net.intersection_names_.push_back(name);
    return NodeId{id};
  };

  std::unordered_map<long, CellIndex> by_label;
  net.labels_.reserve(n);
  for (const auto& cell : description.cells) {
    if (!by_label.emplace(cell.id, net.labels_.size()).second) {
      throw Error(ErrorCode::DuplicateCell, fmt::format("cell {} declared twice", cell.id));
    }
    net.labels_.push_back(cell.id);
    net.source_.push_back(resolve(cell.source));
    net.sink_.push_back(resolve(cell.sink));
  }

  net.turns_.assign(n, {});
  net.inflows_.assign(n, {});
  net.downstream_.assign(n, {});
  net.upstream_.assign(n, {});
  net.same_sink_.assign(n, {});
  net.comm_.assign(n, {});

  for (CellIndex i = 0; i < n; ++i) {
    const auto& cell = description.cells[i];
    for (const auto& t : cell.turns) {
      auto it = by_label.find(t.to);
      if (it == by_label.end()) {
        throw Error(ErrorCode::UnknownCell, fmt::format("cell {} turns into unknown cell {}", cell.id, t.to));
      }
      const CellIndex j = it->second;
      if (is_exterior(net.sink_[i]) || net.sink_[i] != net.source_[j]) {
        throw Error(ErrorCode::InconsistentEdge,
                    fmt::format("cell {} cannot turn into cell {}: sink and source differ", cell.id, t.to));
      }
      if (std::find(net.downstream_[i].begin(), net.downstream_[i].end(), j) != net.downstream_[i].end()) {
        throw Error(ErrorCode::InconsistentEdge, fmt::format("duplicate movement {} -> {}", cell.id, t.to));
      }
      if (!(0.0 <= t.lower && t.lower <= t.nominal && t.nominal <= t.upper && t.upper <= 1.0)) {
        throw Error(ErrorCode::BadRatio,
                    fmt::format("movement {} -> {} needs 0 <= lower <= nominal <= upper <= 1", cell.id, t.to));
      }
      net.turns_[i].push_back(Turn{j, t.nominal, t.lower, t.upper});
      net.downstream_[i].push_back(j);
      net.upstream_[j].push_back(i);
      net.inflows_[j].push_back(Inflow{i, t.nominal, t.lower, t.upper});
    }
  }

  // Assumption of the model: every cell is fed from some entry and drains to
  // some exit along movements with positive nominal ratio.
  std::vector<std::vector<CellIndex>> fwd(n), bwd(n);
  std::vector<CellIndex> entries, exits;
  for (CellIndex i = 0; i < n; ++i) {
    if (net.is_source(i)) entries.push_back(i);
    if (net.is_destination(i)) exits.push_back(i);
    for (const auto& t : net.turns_[i]) {
      if (t.nominal > 0.0) {
        fwd[i].push_back(t.to);
        bwd[t.to].push_back(i);
      }
    }
  }
  const auto fed = reach(fwd, entries);
  const auto drains = reach(bwd, exits);
  for (CellIndex i = 0; i < n; ++i) {
    if (!fed[i]) {
      throw Error(ErrorCode::UnreachableCell,
                  fmt::format("cell {} is not reachable from any entry cell", net.labels_[i]));
    }
    if (!drains[i]) {
      throw Error(ErrorCode::UnreachableCell, fmt::format("cell {} cannot reach any exit cell", net.labels_[i]));
    }
  }

  for (CellIndex i = 0; i < n; ++i) {
    if (net.is_destination(i)) continue;
    double nominal = 0.0, lower = 0.0, upper = 0.0;
    for (const auto& t : net.turns_[i]) {
      nominal += t.nominal;
      lower += t.lower;
      upper += t.upper;
    }
    if (std::abs(nominal - 1.0) > kRowSumTol || lower > 1.0 + kRowSumTol || upper < 1.0 - kRowSumTol) {
      throw Error(ErrorCode::BadRowSum,
                  fmt::format("cell {}: nominal ratios sum to {}, lower {}, upper {}", net.labels_[i], nominal,
                              lower, upper));
    }
  }

  std::vector<std::vector<CellIndex>> by_sink(net.intersection_names_.size());
  for (CellIndex i = 0; i < n; ++i) {
    if (!net.is_destination(i)) by_sink[static_cast<std::size_t>(net.sink_[i])].push_back(i);
  }
  for (CellIndex i = 0; i < n; ++i) {
    sort_unique(net.downstream_[i]);
    sort_unique(net.upstream_[i]);
    if (!net.is_destination(i)) net.same_sink_[i] = by_sink[static_cast<std::size_t>(net.sink_[i])];
    std::sort(net.inflows_[i].begin(), net.inflows_[i].end(),
              [](const Inflow& a, const Inflow& b) { return a.from < b.from; });
  }
  for (CellIndex i = 0; i < n; ++i) {
    auto& c = net.comm_[i];
    c.insert(c.end(), net.downstream_[i].begin(), net.downstream_[i].end());
    c.insert(c.end(), net.upstream_[i].begin(), net.upstream_[i].end());
    c.insert(c.end(), net.same_sink_[i].begin(), net.same_sink_[i].end());
    sort_unique(c);
    c.erase(std::remove(c.begin(), c.end(), i), c.end());
  }
  return net;
}

CellIndex Network::index_of(long label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw Error(ErrorCode::UnknownCell, fmt::format("no cell with id {}", label));
  return static_cast<CellIndex>(it - labels_.begin());
}

const std::string& Network::node_name(NodeId node) const {
  static const std::string exterior = kExteriorName;
  if (is_exterior(node)) return exterior;
  return intersection_names_.at(static_cast<std::size_t>(node));
}

double Network::nominal_ratio(CellIndex from, CellIndex to) const {
  for (const auto& t : turns_.at(from)) {
    if (t.to == to) return t.nominal;
  }
  return 0.0;
}

std::size_t Network::communication_diameter() const {
  const std::size_t n = num_cells();
  std::size_t diameter = 0;
  std::vector<std::size_t> dist(n);
  for (CellIndex s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<std::size_t>::max());
    std::deque<CellIndex> queue{s};
    dist[s] = 0;
    while (!queue.empty()) {
      const CellIndex u = queue.front();
      queue.pop_front();
      diameter = std::max(diameter, dist[u]);
      for (CellIndex v : comm_[u]) {
        if (dist[v] == std::numeric_limits<std::size_t>::max()) {
          dist[v] = dist[u] + 1;
          queue.push_back(v);
        }
      }
    }
  }
  return diameter;
}

NetworkDescription Network::describe() const {
  NetworkDescription d;
  d.intersections = intersection_names_;
  for (CellIndex i = 0; i < num_cells(); ++i) {
    CellSpec c;
    c.id = labels_[i];
    c.source = node_name(source_[i]);
    c.sink = node_name(sink_[i]);
    for (const auto& t : turns_[i]) c.turns.push_back(TurnSpec{labels_[t.to], t.nominal, t.lower, t.upper});
    d.cells.push_back(std::move(c));
  }
  return d;
}

NeighborSets neighbor_sets(const Network& net, CellIndex i) {
  if (i >= net.num_cells()) throw Error(ErrorCode::UnknownCell, fmt::format("cell index {} out of range", i));
  NeighborSets s;
  s.downstream.assign(net.downstream(i).begin(), net.downstream(i).end());
  s.upstream.assign(net.upstream(i).begin(), net.upstream(i).end());
  s.same_sink.assign(net.same_sink(i).begin(), net.same_sink(i).end());
  return s;
}

TurningMatrices turning_matrices(const Network& net) {
  const auto n = static_cast<Eigen::Index>(net.num_cells());
  TurningMatrices m;
  m.nominal = Eigen::MatrixXd::Zero(n, n);
  m.lower = Eigen::MatrixXd::Zero(n, n);
  m.upper = Eigen::MatrixXd::Zero(n, n);
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    for (const auto& t : net.turns(i)) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(t.to);
      m.nominal(r, c) = t.nominal;
      m.lower(r, c) = t.lower;
      m.upper(r, c) = t.upper;
    }
  }
  m.g = Eigen::MatrixXd::Identity(n, n) - m.nominal;
  return m;
}

kernels::RowSparse nominal_sparse(const Network& net) {
  std::vector<Eigen::Triplet<double>> entries;
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    for (const auto& t : net.turns(i)) {
      entries.emplace_back(static_cast<int>(i), static_cast<int>(t.to), t.nominal);
    }
  }
  const auto n = static_cast<Eigen::Index>(net.num_cells());
  kernels::RowSparse r(n, n);
  r.setFromTriplets(entries.begin(), entries.end());
  return r;
}

kernels::RowSparse nominal_sparse_transposed(const Network& net) {
  kernels::RowSparse rt = nominal_sparse(net).transpose();
  return rt;
}

double spectral_radius(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::NonSquare, "spectral radius needs a square matrix");
  const auto n = static_cast<std::size_t>(m.rows());
  if (n == 0) return 0.0;

  // Tarjan's SCC, iterative.
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0.0) adj[i].push_back(j);
    }
  }
  constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> index(n, kUnset), low(n, 0), component(n, kUnset);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::size_t next_index = 0, components = 0;
  struct Frame {
    std::size_t node;
    std::size_t edge;
  };
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != kUnset) continue;
    std::vector<Frame> call{{root, 0}};
    index[root] = low[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      auto& f = call.back();
      if (f.edge < adj[f.node].size()) {
        const std::size_t w = adj[f.node][f.edge++];
        if (index[w] == kUnset) {
          index[w] = low[w] = next_index++;
          stack.push_back(w);
          on_stack[w] = true;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.node] = std::min(low[f.node], index[w]);
        }
      } else {
        const std::size_t v = f.node;
        if (low[v] == index[v]) {
          std::size_t w;
          do {
            w = stack.back();
            stack.pop_back();
            on_stack[w] = false;
            component[w] = components;
          } while (w != v);
          ++components;
        }
        call.pop_back();
        if (!call.empty()) low[call.back().node] = std::min(low[call.back().node], low[v]);
      }
    }
  }

  std::vector<std::vector<std::size_t>> members(components);
  for (std::size_t i = 0; i < n; ++i) members[component[i]].push_back(i);

  double radius = 0.0;
  for (const auto& nodes : members) {
    const auto k = static_cast<Eigen::Index>(nodes.size());
    if (k == 1) {
      const auto i = static_cast<Eigen::Index>(nodes[0]);
      radius = std::max(radius, std::abs(m(i, i)));
      continue;
    }
    Eigen::MatrixXd block(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) {
        block(a, b) = m(static_cast<Eigen::Index>(nodes[static_cast<std::size_t>(a)]),
                        static_cast<Eigen::Index>(nodes[static_cast<std::size_t>(b)]));
      }
    }
    Eigen::EigenSolver<Eigen::MatrixXd> solver(block, false);
    radius = std::max(radius, solver.eigenvalues().cwiseAbs().maxCoeff());
  }
  return radius;
}

std::size_t grid_cell_count(int m, int n) {
  return static_cast<std::size_t>(2 * (m * (n + 1) + n * (m + 1)));
}

NetworkDescription grid_description(int m, int n, const GridParams& params) {
  if (m < 1 || n < 1) throw Error(ErrorCode::BadDimensions, fmt::format("grid needs m,n >= 1 (got {}x{})", m, n));
  if (!(params.ratio_uncertainty >= 0.0 && params.ratio_uncertainty < 1.0)) {
    throw Error(ErrorCode::BadDimensions, "ratio uncertainty must lie in [0,1)");
  }

  NetworkDescription d;
  auto node = [&](int row, int col) -> std::string {
    if (row < 0 || row >= m || col < 0 || col >= n) return kExteriorName;
    return fmt::format("I{}", row * n + col + 1);
  };
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) d.intersections.push_back(node(r, c));
  }

  // Each physical segment carries a pair of opposite cells; the partner of a
  // cell is its U-turn and is never a movement.
  std::vector<long> partner;
  auto add = [&](const std::string& from, const std::string& to) {
    CellSpec c;
    c.id = static_cast<long>(d.cells.size()) + 1;
    c.source = from;
    c.sink = to;
    d.cells.push_back(std::move(c));
    partner.push_back(0);
    return d.cells.back().id;
  };
  auto pair_up = [&](long a, long b) {
    partner[static_cast<std::size_t>(a - 1)] = b;
    partner[static_cast<std::size_t>(b - 1)] = a;
  };

  for (int band = 0; band <= m; ++band) {
    // vertical segments between row band-1 and row band
    for (int c = 0; c < n; ++c) {
      const long south = add(node(band - 1, c), node(band, c));
      const long north = add(node(band, c), node(band - 1, c));
      pair_up(south, north);
    }
    if (band == m) break;
    std::vector<long> west(static_cast<std::size_t>(n + 1));
    for (int s = 0; s <= n; ++s) west[static_cast<std::size_t>(s)] = add(node(band, s), node(band, s - 1));
    for (int s = 0; s <= n; ++s) pair_up(west[static_cast<std::size_t>(s)], add(node(band, s - 1), node(band, s)));
  }

  std::map<std::string, std::vector<long>> outgoing;
  for (const auto& c : d.cells) {
    if (c.source != kExteriorName) outgoing[c.source].push_back(c.id);
  }
  const double delta = params.ratio_uncertainty;
  for (auto& c : d.cells) {
    if (c.sink == kExteriorName) continue;
    std::vector<long> moves;
    for (long j : outgoing[c.sink]) {
      if (j != partner[static_cast<std::size_t>(c.id - 1)]) moves.push_back(j);
    }
    const double share = 1.0 / static_cast<double>(moves.size());
    for (long j : moves) {
      c.turns.push_back(TurnSpec{j, share, std::clamp(share * (1.0 - delta), 0.0, 1.0),
                                 std::clamp(share * (1.0 + delta), 0.0, 1.0)});
    }
  }
  return d;
}

Network grid_network(int m, int n, const GridParams& params) {
  return Network::build(grid_description(m, n, params));
}

NetworkDescription remove_cell(const NetworkDescription& description, long id) {
  NetworkDescription d;
  d.intersections = description.intersections;
  bool found = false;
  for (const auto& cell : description.cells) {
    if (cell.id == id) {
      found = true;
      continue;
    }
    CellSpec c = cell;
    c.turns.erase(std::remove_if(c.turns.begin(), c.turns.end(), [&](const TurnSpec& t) { return t.to == id; }),
                  c.turns.end());
    if (c.turns.size() != cell.turns.size()) {
      const double total = std::accumulate(c.turns.begin(), c.turns.end(), 0.0,
                                           [](double s, const TurnSpec& t) { return s + t.nominal; });
      if (total > 0.0) {
        for (auto& t : c.turns) {
          t.nominal /= total;
          t.lower = std::clamp(t.lower / total, 0.0, t.nominal);
          t.upper = std::clamp(t.upper / total, t.nominal, 1.0);
        }
      }
    }
    d.cells.push_back(std::move(c));
  }
  if (!found) throw Error(ErrorCode::UnknownCell, fmt::format("no cell with id {}", id));
  return d;
}

}  // namespace ctmflow
