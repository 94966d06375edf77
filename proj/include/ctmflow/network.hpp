#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctmflow/kernels.hpp"

namespace ctmflow {

/// Dense position of a cell in every vector and matrix (description order).
using CellIndex = std::size_t;

/// Intersections are numbered 0..M-1 in the order they are first declared;
/// the exterior node O is the distinguished value below.
enum class NodeId : int {};
inline constexpr NodeId kExterior{-1};

inline constexpr bool is_exterior(NodeId node) { return node == kExterior; }

// ---------------------------------------------------------------------------
// Description document (what build_network consumes and describe() emits)
// ---------------------------------------------------------------------------

struct TurnSpec {
  long to = 0;  ///< downstream cell id
  double nominal = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct CellSpec {
  long id = 0;
  std::string source;  ///< node name, "O" for the exterior
  std::string sink;
  std::vector<TurnSpec> turns;
};

struct NetworkDescription {
  std::vector<std::string> intersections;  ///< optional explicit ordering
  std::vector<CellSpec> cells;
};

inline constexpr const char* kExteriorName = "O";

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// One permitted movement out of a cell, with its turning-ratio triple.
struct Turn {
  CellIndex to = 0;
  double nominal = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Incoming view of the same movement, stored at the receiving cell.
struct Inflow {
  CellIndex from = 0;
  double nominal = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct NeighborSets {
  std::vector<CellIndex> downstream;  ///< cells receiving vehicles from i
  std::vector<CellIndex> upstream;    ///< cells sending vehicles into i
  std::vector<CellIndex> same_sink;   ///< cells sharing i's sink intersection (incl. i)
};

/// Immutable, validated road network. Downstream neighbours are the declared
/// movements of a cell, so a movement that is physically adjacent but not
/// declared (a U-turn in the grid generator) is not a neighbour.
class Network {
 public:
  /// Validates the description: ratio bounds, row sums, adjacency of every
  /// movement and source/sink reachability of every cell.
  static Network build(const NetworkDescription& description);

  std::size_t num_cells() const { return labels_.size(); }
  std::size_t num_intersections() const { return intersection_names_.size(); }

  long label(CellIndex i) const { return labels_.at(i); }
  CellIndex index_of(long label) const;

  NodeId source(CellIndex i) const { return source_.at(i); }
  NodeId sink(CellIndex i) const { return sink_.at(i); }
  bool is_source(CellIndex i) const { return is_exterior(source(i)); }
  bool is_destination(CellIndex i) const { return is_exterior(sink(i)); }
  const std::string& node_name(NodeId node) const;

  std::span<const Turn> turns(CellIndex i) const { return turns_.at(i); }
  std::span<const Inflow> inflows(CellIndex i) const { return inflows_.at(i); }
  std::span<const CellIndex> downstream(CellIndex i) const { return downstream_.at(i); }
  std::span<const CellIndex> upstream(CellIndex i) const { return upstream_.at(i); }
  std::span<const CellIndex> same_sink(CellIndex i) const { return same_sink_.at(i); }

  /// N-(i) u N+(i) u I(i) without i itself, sorted.
  std::span<const CellIndex> communication_neighbors(CellIndex i) const { return comm_.at(i); }

  /// Longest shortest path in the (undirected) communication graph.
  std::size_t communication_diameter() const;

  double nominal_ratio(CellIndex from, CellIndex to) const;

  NetworkDescription describe() const;

 private:
  std::vector<long> labels_;
  std::vector<NodeId> source_;
  std::vector<NodeId> sink_;
  std::vector<std::string> intersection_names_;
  std::vector<std::vector<Turn>> turns_;
  std::vector<std::vector<Inflow>> inflows_;
  std::vector<std::vector<CellIndex>> downstream_;
  std::vector<std::vector<CellIndex>> upstream_;
  std::vector<std::vector<CellIndex>> same_sink_;
  std::vector<std::vector<CellIndex>> comm_;
};

/// Throws UnknownCell when i is out of range.
NeighborSets neighbor_sets(const Network& net, CellIndex i);

struct TurningMatrices {
  Eigen::MatrixXd nominal;  ///< R*
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  Eigen::MatrixXd g;  ///< I - R*
};

TurningMatrices turning_matrices(const Network& net);

/// Sparse R* (rows = downstream movements) and its transpose, for sweeps.
kernels::RowSparse nominal_sparse(const Network& net);
kernels::RowSparse nominal_sparse_transposed(const Network& net);

/// Largest eigenvalue modulus. The matrix is split into the strongly connected
/// components of its sparsity graph; acyclic parts contribute exact zeros and
/// each cyclic block is eigensolved on its own.
double spectral_radius(const Eigen::MatrixXd& m);

struct GridParams {
  double ratio_uncertainty = 0.05;  ///< bounds are nominal * (1 -/+ this), clamped to [0,1]
};

/// m rows by n columns of intersections, numbered like the 2x2 example:
/// boundary/vertical bands (southbound then northbound per column) alternate
/// with horizontal rows (westbound segments then eastbound). U-turns are not
/// movements; splits are uniform over the remaining outgoing cells.
NetworkDescription grid_description(int m, int n, const GridParams& params = {});
Network grid_network(int m, int n, const GridParams& params = {});

std::size_t grid_cell_count(int m, int n);

/// Drops a cell and every movement into it, renormalising the affected rows.
NetworkDescription remove_cell(const NetworkDescription& description, long id);

}  // namespace ctmflow
