#pragma once

// Per-cell agents that solve one cycle's program by exchanging messages with
// their communication neighbours only. Rounds are bulk-synchronous: every
// message sent in round t is delivered before round t+1 starts.
//
// Schedule shared by all agents (they stay in lockstep):
//   learn      ζ- and f-recursions from random states, streamed into Hankel
//              detectors to get Θ and D for each recursion
//   dmax       flood-max of D over the communication graph
//   outer loop share η entries, D_max ζ sweeps, finalise ζ*, x*,
//              D_max f sweeps, finalise f*, exchange finals, check local
//              balances, tentative η step, flood the violation/stop votes
// A violation sends everybody back to `learn` with fresh random states and
// repeats the same outer iteration.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ctmflow/ctm.hpp"
#include "ctmflow/final_value.hpp"
#include "ctmflow/network.hpp"
#include "ctmflow/qp_core.hpp"

namespace ctmflow {

enum class MessageKind : std::uint8_t {
  ZetaValue = 0,
  FlowValue = 1,
  EtaNeededValues = 2,  ///< payload: lambda, theta, nu, gamma
  FinalFlag = 3,        ///< payload: zeta*, f*
  ViolationNotice = 4,  ///< payload: stop vote
  DmaxBroadcast = 5,    ///< payload: D
  ConvergenceVote = 6,  ///< payload: stop vote
};

struct Message {
  std::uint32_t sender = 0;  ///< cell index
  MessageKind kind = MessageKind::ZetaValue;
  std::vector<double> payload;

  bool operator==(const Message&) const = default;
};

/// u32 record length (bytes after this field), u32 sender, u8 kind, then the
/// payload as f64. All little-endian.
std::vector<std::uint8_t> encode(const Message& m);
/// Decodes one record starting at `offset` and advances it. Throws ParseError.
Message decode(std::span<const std::uint8_t> bytes, std::size_t& offset);

struct Envelope {
  CellIndex to = 0;
  Message message;
};

// ---------------------------------------------------------------------------
// Local data of one agent
// ---------------------------------------------------------------------------

struct NeighborRatio {
  CellIndex cell = 0;
  double nominal = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct AgentConfig {
  CellIndex cell = 0;
  std::vector<NeighborRatio> downstream;  ///< r_ij for j in N-(i)
  std::vector<NeighborRatio> upstream;    ///< r_ji for j in N+(i)
  std::vector<std::pair<CellIndex, double>> same_sink;  ///< (j, v_j) for j in I(i), i included
  std::vector<CellIndex> comm;            ///< N- u N+ u I without i

  double x0 = 0.0, x_lower = 0.0, x_upper = 0.0, f_upper = 0.0, s_upper = 0.0, v = 0.0, T = 0.0;
  double a = 1.0, b = 0.0, w = 0.0;

  double epsilon = 0.0;
  double tolerance = 0.0;
  double verify_tol = 1e-6;
  std::size_t max_order = 0;  ///< bound on the recursion order; learning runs 2*max_order+2 observations
  std::size_t diameter = 0;   ///< communication-graph diameter bound used by the floods
  int max_outer = 50'000;
  std::uint64_t seed = 0;
  FinalValueOptions detector;

  // Fault injection (tests only).
  std::optional<std::pair<double, double>> first_learning_start;  ///< (zeta0, f0) for the first learning pass
  std::optional<double> corrupt_zeta_theta;  ///< added to Theta_0 of the zeta recursion after the first learning
};

/// Extracts cell i's slice of the network and problem data.
AgentConfig make_agent_config(const Network& net, const ProblemData& pd, CellIndex i);

using NeighborValues = std::map<CellIndex, double>;

/// sum_{j in N-(i)} r_ij zeta_j + h. Throws MissingNeighborValue.
double jacobi_zeta_step(const AgentConfig& cfg, const NeighborValues& zeta, double h);
/// sum_{j in N+(i)} r_ji f_j + x0 - x_star. Throws MissingNeighborValue.
double jacobi_flow_step(const AgentConfig& cfg, const NeighborValues& flow, double x_star);

/// The six local multipliers in (lambda, theta, alpha, beta, nu, gamma) order.
using LocalEta = std::array<double, 6>;

/// h_i = w_i + lambda_i - sum r_lo_ij lambda_j - theta_i + sum r_hi_ij theta_j - alpha_i + beta_i
///       + sum r_hi_ij nu_j + v_i sum_{j in I(i)} gamma_j.
/// `shared` maps neighbour j to its (lambda, theta, nu, gamma). Throws MissingNeighborValue.
double local_h(const AgentConfig& cfg, const LocalEta& own, const std::map<CellIndex, std::array<double, 4>>& shared);

/// The cell's six constraint rows, built from local data only; matches
/// local_rows(Q, q, cell) of the centralized matrices.
LocalRows local_rows(const AgentConfig& cfg);

/// Projected update of the six local multipliers, followed by the cell's RowReduction.
/// `f_star` must hold N+(i) and I(i) (self included).
LocalEta eta_step(const AgentConfig& cfg, const LocalEta& eta, const NeighborValues& f_star);

enum class VerifyStatus { Ok, Violation };

struct Finals {
  double zeta = 0.0;
  double flow = 0.0;
};

/// Checks the local zeta and flow balances at the exchanged finals.
VerifyStatus verify_and_recover(const AgentConfig& cfg, double h, double x_star, const Finals& own,
                                const std::map<CellIndex, Finals>& neighbor_finals);

// ---------------------------------------------------------------------------
// Agent state machine
// ---------------------------------------------------------------------------

enum class AgentPhase { Learn, DmaxFlood, EtaShare, ZetaSweep, FlowSweep, Finals, VoteFlood, Done };

class Agent {
 public:
  explicit Agent(AgentConfig cfg);

  /// Messages for round 0.
  std::vector<Envelope> start();

  /// Consumes the messages sent to this agent in the previous round and
  /// returns this round's messages. Throws ProtocolViolation on a missing
  /// or out-of-phase message.
  std::vector<Envelope> round(const std::vector<Message>& inbox);

  AgentPhase phase() const { return phase_; }
  bool done() const { return phase_ == AgentPhase::Done; }
  bool converged() const { return converged_; }
  const AgentConfig& config() const { return cfg_; }
  const LocalEta& eta() const { return eta_; }
  double flow() const { return f_out_; }
  int outer_iteration() const { return k_; }
  std::size_t d_zeta() const { return d_zeta_; }
  std::size_t d_flow() const { return d_flow_; }
  std::size_t d_max() const { return d_max_; }
  int learnings() const { return learnings_; }
  bool raised_violation() const { return raised_violation_; }

 private:
  double uniform() { return dist_(rng_); }
  void begin_learning(std::vector<Envelope>& out);
  void finish_learning(std::vector<Envelope>& out);
  void begin_outer(std::vector<Envelope>& out);
  void finish_vote(std::vector<Envelope>& out);
  void broadcast(std::vector<Envelope>& out, MessageKind kind, std::vector<double> payload) const;
  void send_to(std::vector<Envelope>& out, std::span<const NeighborRatio> targets, MessageKind kind,
               double value) const;
  NeighborValues collect(const std::vector<Message>& inbox, MessageKind kind,
                         std::span<const NeighborRatio> from) const;
  void expect_only(const std::vector<Message>& inbox, std::initializer_list<MessageKind> kinds) const;

  AgentConfig cfg_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> dist_{0.0, 1.0};

  AgentPhase phase_ = AgentPhase::Learn;
  std::size_t counter_ = 0;
  int k_ = 0;
  int learnings_ = 0;
  bool converged_ = false;

  // learning
  std::size_t learning_rounds_ = 0;
  double zeta_ = 0.0, f_ = 0.0;
  HankelDetector det_zeta_, det_flow_;
  Eigen::VectorXd theta_zeta_, theta_flow_;
  std::size_t d_zeta_ = 0, d_flow_ = 0, d_max_ = 0;
  bool learning_failed_ = false;

  // outer iteration
  LocalEta eta_{};
  LocalEta eta_next_{};
  double h_ = 0.0;
  std::vector<double> history_;
  double zeta_star_ = 0.0, x_star_ = 0.0, f_star_ = 0.0;
  double f_out_ = 0.0;
  bool violation_ = false, stop_ = false;
  bool raised_violation_ = false;
};

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

/// Delivery of one round's messages. Implementations may serialise.
class Transport {
 public:
  virtual ~Transport() = default;
  /// Routes all envelopes sent in `round`; returns one inbox per cell.
  virtual std::vector<std::vector<Message>> deliver(std::size_t round, std::vector<Envelope> sent) = 0;
};

struct DropFault {
  std::size_t round = 0;
  CellIndex from = 0;
  CellIndex to = 0;
};

/// In-process bus. Every message is passed through the wire encoding, and a
/// message whose receiver is not a communication neighbour of its sender is
/// rejected with LocalityViolation.
class InProcessBus final : public Transport {
 public:
  explicit InProcessBus(const Network& net);
  std::vector<std::vector<Message>> deliver(std::size_t round, std::vector<Envelope> sent) override;

  /// Drops the single matching message once.
  void schedule_drop(DropFault fault) { drop_ = fault; }
  std::size_t delivered() const { return delivered_; }
  std::size_t dropped() const { return dropped_; }

 private:
  std::vector<std::vector<CellIndex>> allowed_;
  std::optional<DropFault> drop_;
  std::size_t delivered_ = 0;
  std::size_t dropped_ = 0;
};

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct FaultPlan {
  std::optional<DropFault> drop;               ///< in the first attempt only
  std::optional<CellIndex> corrupt_theta_at;   ///< one agent's zeta coefficients, first learning only
  double corrupt_theta_by = 0.5;
  bool adversarial_start = false;  ///< first learning starts at the recursions' exact fixed points
};

struct DistributedOptions {
  double epsilon = 0.0;
  double tolerance = 0.0;  ///< 0: same default as the centralized solver
  int max_outer = 50'000;
  std::uint64_t seed = 1;
  std::size_t max_order = 0;  ///< 0: number of cells
  double verify_tol = 1e-6;
  int max_restarts = 3;
  bool serial = false;
  bool record_eta = false;
  FaultPlan faults;
  FinalValueOptions detector;
};

struct DistributedReport {
  Eigen::VectorXd f;
  Eigen::VectorXd eta;  ///< stacked 6N, gathered for diagnostics
  bool converged = false;
  int outer_iterations = 0;
  std::size_t rounds = 0;
  std::size_t d_max = 0;
  std::vector<std::size_t> d_zeta, d_flow;
  int learnings = 0;           ///< learning passes (1 without violations)
  int violations = 0;          ///< outer iterations redone after a violation notice
  int restarts = 0;            ///< protocol restarts after a ProtocolViolation
  std::vector<std::string> protocol_errors;
  std::size_t messages = 0;
  std::size_t dropped = 0;  ///< messages removed by an injected drop
  std::vector<Eigen::VectorXd> eta_trace;  ///< eta(0), eta(1), ... when recorded
};

/// Runs the agent system to completion. Throws NonConvergence when the outer
/// cap is reached and ProtocolViolation when the restarts are exhausted.
DistributedReport distributed_solve(const Network& net, const ProblemData& pd, const DistributedOptions& opts);

}  // namespace ctmflow
