#include "ctmflow/distributed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ctmflow/centralized.hpp"
#include "ctmflow/error.hpp"
#include "ctmflow/qp_core.hpp"

namespace ctmflow {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int b = 0; b < width; ++b) v |= static_cast<std::uint64_t>(bytes[at + static_cast<std::size_t>(b)]) << (8 * b);
  return v;
}

const char* kind_name(MessageKind k) {
  switch (k) {
    case MessageKind::ZetaValue: return "zeta_value";
    case MessageKind::FlowValue: return "flow_value";
    case MessageKind::EtaNeededValues: return "eta_needed_values";
    case MessageKind::FinalFlag: return "final_flag";
    case MessageKind::ViolationNotice: return "violation_notice";
    case MessageKind::DmaxBroadcast: return "dmax_broadcast";
    case MessageKind::ConvergenceVote: return "convergence_vote";
  }
  return "unknown";
}

const char* phase_name(AgentPhase p) {
  switch (p) {
    case AgentPhase::Learn: return "learn";
    case AgentPhase::DmaxFlood: return "dmax";
    case AgentPhase::EtaShare: return "eta-share";
    case AgentPhase::ZetaSweep: return "zeta-sweep";
    case AgentPhase::FlowSweep: return "flow-sweep";
    case AgentPhase::Finals: return "finals";
    case AgentPhase::VoteFlood: return "vote";
    case AgentPhase::Done: return "done";
  }
  return "unknown";
}

double lookup(const NeighborValues& values, CellIndex j, CellIndex owner) {
  auto it = values.find(j);
  if (it == values.end()) {
    throw Error(ErrorCode::MissingNeighborValue, fmt::format("cell index {} lacks the value of {}", owner, j));
  }
  return it->second;
}

}  // namespace

std::vector<std::uint8_t> encode(const Message& m) {
  std::vector<std::uint8_t> out;
  out.reserve(9 + 8 * m.payload.size());
  put_u32(out, static_cast<std::uint32_t>(4 + 1 + 8 * m.payload.size()));
  put_u32(out, m.sender);
  out.push_back(static_cast<std::uint8_t>(m.kind));
  for (double v : m.payload) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Message decode(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (offset + 4 > bytes.size()) throw Error(ErrorCode::ParseError, "truncated record length");
  const auto len = static_cast<std::size_t>(get_le(bytes, offset, 4));
  if (len < 5 || (len - 5) % 8 != 0 || offset + 4 + len > bytes.size()) {
    throw Error(ErrorCode::ParseError, fmt::format("bad record length {}", len));
  }
  Message m;
  m.sender = static_cast<std::uint32_t>(get_le(bytes, offset + 4, 4));
  const std::uint8_t kind = bytes[offset + 8];
  if (kind > static_cast<std::uint8_t>(MessageKind::ConvergenceVote)) {
    throw Error(ErrorCode::ParseError, fmt::format("unknown message kind {}", kind));
  }
  m.kind = static_cast<MessageKind>(kind);
  const std::size_t count = (len - 5) / 8;
  m.payload.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    m.payload[k] = std::bit_cast<double>(get_le(bytes, offset + 9 + 8 * k, 8));
  }
  offset += 4 + len;
  return m;
}

AgentConfig make_agent_config(const Network& net, const ProblemData& pd, CellIndex i) {
  AgentConfig cfg;
  cfg.cell = i;
  for (const auto& t : net.turns(i)) cfg.downstream.push_back({t.to, t.nominal, t.lower, t.upper});
  for (const auto& in : net.inflows(i)) cfg.upstream.push_back({in.from, in.nominal, in.lower, in.upper});
  for (CellIndex j : net.same_sink(i)) cfg.same_sink.emplace_back(j, pd.v(static_cast<Eigen::Index>(j)));
  const auto comm = net.communication_neighbors(i);
  cfg.comm.assign(comm.begin(), comm.end());
  const auto k = static_cast<Eigen::Index>(i);
  cfg.x0 = pd.x0(k);
  cfg.x_lower = pd.x_lower(k);
  cfg.x_upper = pd.x_upper(k);
  cfg.f_upper = pd.f_upper(k);
  cfg.s_upper = pd.s_upper(k);
  cfg.v = pd.v(k);
  cfg.T = pd.T;
  cfg.a = pd.a(k);
  cfg.b = pd.b(k);
  cfg.w = pd.w(k);
  return cfg;
}

double jacobi_zeta_step(const AgentConfig& cfg, const NeighborValues& zeta, double h) {
  double acc = h;
  for (const auto& d : cfg.downstream) acc += d.nominal * lookup(zeta, d.cell, cfg.cell);
  return acc;
}

double jacobi_flow_step(const AgentConfig& cfg, const NeighborValues& flow, double x_star) {
  double acc = cfg.x0 - x_star;
  for (const auto& u : cfg.upstream) acc += u.nominal * lookup(flow, u.cell, cfg.cell);
  return acc;
}

double local_h(const AgentConfig& cfg, const LocalEta& own,
               const std::map<CellIndex, std::array<double, 4>>& shared) {
  auto get = [&](CellIndex j) -> std::array<double, 4> {
    if (j == cfg.cell) return {own[kLambda], own[kTheta], own[kNu], own[kGamma]};
    auto it = shared.find(j);
    if (it == shared.end()) {
      throw Error(ErrorCode::MissingNeighborValue, fmt::format("cell index {} lacks multipliers of {}", cfg.cell, j));
    }
    return it->second;
  };
  double h = cfg.w + own[kLambda] - own[kTheta] - own[kAlpha] + own[kBeta];
  for (const auto& d : cfg.downstream) {
    const auto e = get(d.cell);
    h += -d.lower * e[0] + d.upper * e[1] + d.upper * e[2];
  }
  double gamma_sum = 0.0;
  for (const auto& [j, vj] : cfg.same_sink) gamma_sum += get(j)[3];
  return h + cfg.v * gamma_sum;
}

LocalRows local_rows(const AgentConfig& cfg) {
  LocalRows rows;
  auto add = [&](int m, CellIndex j, double v) {
    if (v != 0.0) rows.normal[m].emplace_back(j, v);
  };
  std::vector<std::pair<CellIndex, double>> lower, upper;
  for (const auto& u : cfg.upstream) {
    lower.emplace_back(u.cell, -u.lower);
    upper.emplace_back(u.cell, u.upper);
  }
  lower.emplace_back(cfg.cell, 1.0);
  upper.emplace_back(cfg.cell, -1.0);
  std::sort(lower.begin(), lower.end());
  std::sort(upper.begin(), upper.end());
  for (const auto& [j, v] : lower) add(kLambda, j, v);
  for (const auto& [j, v] : upper) add(kTheta, j, v);
  add(kAlpha, cfg.cell, -1.0);
  add(kBeta, cfg.cell, 1.0);
  for (const auto& u : cfg.upstream) add(kNu, u.cell, u.upper);
  std::sort(rows.normal[kNu].begin(), rows.normal[kNu].end());
  auto sink = cfg.same_sink;
  std::sort(sink.begin(), sink.end());
  for (const auto& [j, vj] : sink) add(kGamma, j, vj);
  rows.rhs = {cfg.x_lower, cfg.x_upper, 0.0, cfg.f_upper, cfg.s_upper, cfg.T};
  return rows;
}

LocalEta eta_step(const AgentConfig& cfg, const LocalEta& eta, const NeighborValues& f_star) {
  const double fi = lookup(f_star, cfg.cell, cfg.cell);
  double in_lo = 0.0, in_hi = 0.0;
  for (const auto& u : cfg.upstream) {
    const double fj = lookup(f_star, u.cell, cfg.cell);
    in_lo += u.lower * fj;
    in_hi += u.upper * fj;
  }
  double green = 0.0;
  for (const auto& [j, vj] : cfg.same_sink) green += vj * lookup(f_star, j, cfg.cell);

  std::array<double, 6> grad{};
  grad[kLambda] = fi - in_lo - cfg.x_lower;
  grad[kTheta] = -fi + in_hi - cfg.x_upper;
  grad[kAlpha] = -fi;
  grad[kBeta] = fi - cfg.f_upper;
  grad[kNu] = in_hi - cfg.s_upper;
  grad[kGamma] = green - cfg.T;
  LocalEta next{};
  for (int m = 0; m < kMultipliersPerCell; ++m) next[m] = std::max(0.0, eta[m] + cfg.epsilon * grad[m]);
  RowReduction::plan(local_rows(cfg)).apply(next);
  return next;
}

VerifyStatus verify_and_recover(const AgentConfig& cfg, double h, double x_star, const Finals& own,
                                const std::map<CellIndex, Finals>& neighbor_finals) {
  auto get = [&](CellIndex j) -> const Finals& {
    if (j == cfg.cell) return own;
    auto it = neighbor_finals.find(j);
    if (it == neighbor_finals.end()) {
      throw Error(ErrorCode::MissingNeighborValue, fmt::format("cell index {} lacks finals of {}", cfg.cell, j));
    }
    return it->second;
  };
  double zeta_res = own.zeta - h;
  for (const auto& d : cfg.downstream) zeta_res -= d.nominal * get(d.cell).zeta;
  double flow_res = own.flow - cfg.x0 + x_star;
  for (const auto& u : cfg.upstream) flow_res -= u.nominal * get(u.cell).flow;
  const bool ok = std::abs(zeta_res) <= cfg.verify_tol * std::max(1.0, std::abs(own.zeta)) &&
                  std::abs(flow_res) <= cfg.verify_tol * std::max(1.0, std::abs(own.flow));
  return ok ? VerifyStatus::Ok : VerifyStatus::Violation;
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

Agent::Agent(AgentConfig cfg) : cfg_(std::move(cfg)), det_zeta_(cfg_.detector), det_flow_(cfg_.detector) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(cfg_.cell), 0x5eedu};
  rng_.seed(seq);
  if (cfg_.max_order == 0) cfg_.max_order = 1;
  cfg_.detector.max_order = cfg_.max_order;
  cfg_.detector.max_observations = 0;
  learning_rounds_ = 2 * cfg_.max_order + 2;
}

void Agent::broadcast(std::vector<Envelope>& out, MessageKind kind, std::vector<double> payload) const {
  for (CellIndex j : cfg_.comm) out.push_back({j, Message{static_cast<std::uint32_t>(cfg_.cell), kind, payload}});
}

void Agent::send_to(std::vector<Envelope>& out, std::span<const NeighborRatio> targets, MessageKind kind,
                    double value) const {
  for (const auto& t : targets) {
    out.push_back({t.cell, Message{static_cast<std::uint32_t>(cfg_.cell), kind, {value}}});
  }
}

void Agent::expect_only(const std::vector<Message>& inbox, std::initializer_list<MessageKind> kinds) const {
  for (const auto& m : inbox) {
    if (std::find(kinds.begin(), kinds.end(), m.kind) == kinds.end()) {
      throw Error(ErrorCode::ProtocolViolation, fmt::format("cell index {} in phase {} got {} from {}", cfg_.cell,
                                                            phase_name(phase_), kind_name(m.kind), m.sender));
    }
  }
}

NeighborValues Agent::collect(const std::vector<Message>& inbox, MessageKind kind,
                              std::span<const NeighborRatio> from) const {
  NeighborValues values;
  for (const auto& m : inbox) {
    if (m.kind == kind && !m.payload.empty()) values.emplace(m.sender, m.payload[0]);
  }
  for (const auto& n : from) {
    if (!values.contains(n.cell)) {
      throw Error(ErrorCode::ProtocolViolation, fmt::format("cell index {} in phase {} missing {} from {}", cfg_.cell,
                                                            phase_name(phase_), kind_name(kind), n.cell));
    }
  }
  return values;
}

namespace {

// One message of `kinds` from every communication neighbour.
std::map<CellIndex, const Message*> from_all(const std::vector<Message>& inbox, const AgentConfig& cfg,
                                             AgentPhase phase, std::size_t min_payload) {
  std::map<CellIndex, const Message*> got;
  for (const auto& m : inbox) {
    if (m.payload.size() >= min_payload) got.emplace(m.sender, &m);
  }
  for (CellIndex j : cfg.comm) {
    if (!got.contains(j)) {
      throw Error(ErrorCode::ProtocolViolation,
                  fmt::format("cell index {} in phase {} missing a message from {}", cfg.cell, phase_name(phase), j));
    }
  }
  return got;
}

}  // namespace

std::vector<Envelope> Agent::start() {
  std::vector<Envelope> out;
  begin_learning(out);
  return out;
}

void Agent::begin_learning(std::vector<Envelope>& out) {
  phase_ = AgentPhase::Learn;
  det_zeta_ = HankelDetector(cfg_.detector);
  det_flow_ = HankelDetector(cfg_.detector);
  learning_failed_ = false;
  if (learnings_ == 0 && cfg_.first_learning_start) {
    zeta_ = cfg_.first_learning_start->first;
    f_ = cfg_.first_learning_start->second;
  } else {
    zeta_ = uniform();
    f_ = uniform();
  }
  ++learnings_;
  det_zeta_.observe(zeta_);
  det_flow_.observe(f_);
  counter_ = 1;
  send_to(out, cfg_.upstream, MessageKind::ZetaValue, zeta_);
  send_to(out, cfg_.downstream, MessageKind::FlowValue, f_);
}

void Agent::finish_learning(std::vector<Envelope>& out) {
  auto take = [&](const HankelDetector& d, Eigen::VectorXd& theta, std::size_t& used) {
    if (d.status() == DetectorStatus::Defective) {
      theta = d.coefficients();
      used = d.observations();
    } else {
      learning_failed_ = true;
      theta = Eigen::VectorXd::Ones(1);
      used = learning_rounds_;
    }
  };
  take(det_zeta_, theta_zeta_, d_zeta_);
  take(det_flow_, theta_flow_, d_flow_);
  if (learnings_ == 1 && cfg_.corrupt_zeta_theta) theta_zeta_(0) += *cfg_.corrupt_zeta_theta;
  d_max_ = std::max(d_zeta_, d_flow_);
  phase_ = AgentPhase::DmaxFlood;
  counter_ = 0;
  if (cfg_.diameter == 0) {
    begin_outer(out);
  } else {
    broadcast(out, MessageKind::DmaxBroadcast, {static_cast<double>(d_max_)});
  }
}

void Agent::begin_outer(std::vector<Envelope>& out) {
  phase_ = AgentPhase::EtaShare;
  violation_ = false;
  stop_ = false;
  broadcast(out, MessageKind::EtaNeededValues, {eta_[kLambda], eta_[kTheta], eta_[kNu], eta_[kGamma]});
}

void Agent::finish_vote(std::vector<Envelope>& out) {
  if (violation_) {
    begin_learning(out);
    return;
  }
  if (stop_) {
    f_out_ = f_star_;
    converged_ = true;
    phase_ = AgentPhase::Done;
    return;
  }
  eta_ = eta_next_;
  ++k_;
  if (k_ >= cfg_.max_outer) {
    f_out_ = f_star_;
    phase_ = AgentPhase::Done;
    return;
  }
  begin_outer(out);
}

std::vector<Envelope> Agent::round(const std::vector<Message>& inbox) {
  std::vector<Envelope> out;
  switch (phase_) {
    case AgentPhase::Learn: {
      expect_only(inbox, {MessageKind::ZetaValue, MessageKind::FlowValue});
      const NeighborValues zv = collect(inbox, MessageKind::ZetaValue, cfg_.downstream);
      const NeighborValues fv = collect(inbox, MessageKind::FlowValue, cfg_.upstream);
      // Any constant works for learning: the coefficients depend only on R.
      zeta_ = jacobi_zeta_step(cfg_, zv, cfg_.w);
      f_ = jacobi_flow_step(cfg_, fv, 0.0);
      if (det_zeta_.status() == DetectorStatus::Collecting) det_zeta_.observe(zeta_);
      if (det_flow_.status() == DetectorStatus::Collecting) det_flow_.observe(f_);
      if (++counter_ < learning_rounds_) {
        send_to(out, cfg_.upstream, MessageKind::ZetaValue, zeta_);
        send_to(out, cfg_.downstream, MessageKind::FlowValue, f_);
      } else {
        finish_learning(out);
      }
      break;
    }
    case AgentPhase::DmaxFlood: {
      expect_only(inbox, {MessageKind::DmaxBroadcast});
      for (const auto& [j, m] : from_all(inbox, cfg_, phase_, 1)) {
        d_max_ = std::max(d_max_, static_cast<std::size_t>(m->payload[0]));
      }
      if (++counter_ < cfg_.diameter) {
        broadcast(out, MessageKind::DmaxBroadcast, {static_cast<double>(d_max_)});
      } else {
        begin_outer(out);
      }
      break;
    }
    case AgentPhase::EtaShare: {
      expect_only(inbox, {MessageKind::EtaNeededValues});
      std::map<CellIndex, std::array<double, 4>> shared;
      for (const auto& [j, m] : from_all(inbox, cfg_, phase_, 4)) {
        shared[j] = {m->payload[0], m->payload[1], m->payload[2], m->payload[3]};
      }
      h_ = local_h(cfg_, eta_, shared);
      zeta_ = uniform();
      history_.assign(1, zeta_);
      counter_ = 0;
      phase_ = AgentPhase::ZetaSweep;
      send_to(out, cfg_.upstream, MessageKind::ZetaValue, zeta_);
      break;
    }
    case AgentPhase::ZetaSweep: {
      expect_only(inbox, {MessageKind::ZetaValue});
      zeta_ = jacobi_zeta_step(cfg_, collect(inbox, MessageKind::ZetaValue, cfg_.downstream), h_);
      history_.push_back(zeta_);
      if (++counter_ < d_max_) {
        send_to(out, cfg_.upstream, MessageKind::ZetaValue, zeta_);
        break;
      }
      const auto len = static_cast<std::size_t>(theta_zeta_.size());
      try {
        zeta_star_ =
            final_value(theta_zeta_, std::span<const double>(history_).last(len), cfg_.detector.denominator_tol);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateDenominator) throw;
        zeta_star_ = zeta_;
        violation_ = true;
      }
      x_star_ = (zeta_star_ - cfg_.b) / (2.0 * cfg_.a);
      f_ = uniform();
      history_.assign(1, f_);
      counter_ = 0;
      phase_ = AgentPhase::FlowSweep;
      send_to(out, cfg_.downstream, MessageKind::FlowValue, f_);
      break;
    }
    case AgentPhase::FlowSweep: {
      expect_only(inbox, {MessageKind::FlowValue});
      f_ = jacobi_flow_step(cfg_, collect(inbox, MessageKind::FlowValue, cfg_.upstream), x_star_);
      history_.push_back(f_);
      if (++counter_ < d_max_) {
        send_to(out, cfg_.downstream, MessageKind::FlowValue, f_);
        break;
      }
      const auto len = static_cast<std::size_t>(theta_flow_.size());
      try {
        f_star_ = final_value(theta_flow_, std::span<const double>(history_).last(len), cfg_.detector.denominator_tol);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateDenominator) throw;
        f_star_ = f_;
        violation_ = true;
      }
      phase_ = AgentPhase::Finals;
      broadcast(out, MessageKind::FinalFlag, {zeta_star_, f_star_});
      break;
    }
    case AgentPhase::Finals: {
      expect_only(inbox, {MessageKind::FinalFlag});
      std::map<CellIndex, Finals> finals;
      NeighborValues f_star;
      for (const auto& [j, m] : from_all(inbox, cfg_, phase_, 2)) {
        finals[j] = Finals{m->payload[0], m->payload[1]};
        f_star[j] = m->payload[1];
      }
      f_star[cfg_.cell] = f_star_;
      const Finals own{zeta_star_, f_star_};
      if (verify_and_recover(cfg_, h_, x_star_, own, finals) == VerifyStatus::Violation || learning_failed_) {
        violation_ = true;
      }
      raised_violation_ = raised_violation_ || violation_;
      eta_next_ = eta_step(cfg_, eta_, f_star);
      double change = 0.0;
      for (int m = 0; m < kMultipliersPerCell; ++m) change = std::max(change, std::abs(eta_next_[m] - eta_[m]));
      stop_ = change < cfg_.tolerance;
      phase_ = AgentPhase::VoteFlood;
      counter_ = 0;
      if (cfg_.diameter == 0) {
        finish_vote(out);
      } else {
        broadcast(out, violation_ ? MessageKind::ViolationNotice : MessageKind::ConvergenceVote,
                  {stop_ ? 1.0 : 0.0});
      }
      break;
    }
    case AgentPhase::VoteFlood: {
      expect_only(inbox, {MessageKind::ViolationNotice, MessageKind::ConvergenceVote});
      for (const auto& [j, m] : from_all(inbox, cfg_, phase_, 1)) {
        if (m->kind == MessageKind::ViolationNotice) violation_ = true;
        if (m->payload[0] == 0.0) stop_ = false;
      }
      if (++counter_ < cfg_.diameter) {
        broadcast(out, violation_ ? MessageKind::ViolationNotice : MessageKind::ConvergenceVote,
                  {stop_ ? 1.0 : 0.0});
      } else {
        finish_vote(out);
      }
      break;
    }
    case AgentPhase::Done:
      if (!inbox.empty()) {
        throw Error(ErrorCode::ProtocolViolation, fmt::format("cell index {} got messages after finishing", cfg_.cell));
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bus
// ---------------------------------------------------------------------------

InProcessBus::InProcessBus(const Network& net) : allowed_(net.num_cells()) {
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    const auto c = net.communication_neighbors(i);
    allowed_[i].assign(c.begin(), c.end());
  }
}

std::vector<std::vector<Message>> InProcessBus::deliver(std::size_t round, std::vector<Envelope> sent) {
  std::vector<std::vector<Message>> inboxes(allowed_.size());
  std::vector<std::uint8_t> wire;
  for (auto& e : sent) {
    const CellIndex from = e.message.sender;
    if (from >= allowed_.size() || e.to >= allowed_.size() ||
        !std::binary_search(allowed_[from].begin(), allowed_[from].end(), e.to)) {
      throw Error(ErrorCode::LocalityViolation,
                  fmt::format("message {} -> {} is not a communication edge", from, e.to));
    }
    if (drop_ && drop_->round == round && drop_->from == from && drop_->to == e.to) {
      drop_.reset();
      ++dropped_;
      continue;
    }
    wire = encode(e.message);
    std::size_t offset = 0;
    inboxes[e.to].push_back(decode(wire, offset));
    ++delivered_;
  }
  return inboxes;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd stacked_eta(const std::vector<Agent>& agents) {
  Eigen::VectorXd eta(static_cast<Eigen::Index>(agents.size()) * kMultipliersPerCell);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    for (int m = 0; m < kMultipliersPerCell; ++m) eta(eta_index(i, static_cast<Multiplier>(m))) = agents[i].eta()[m];
  }
  return eta;
}

constexpr std::size_t kParallelAgents = 16;
constexpr int kMaxLearnings = 50;

}  // namespace

DistributedReport distributed_solve(const Network& net, const ProblemData& pd, const DistributedOptions& opts) {
  const std::size_t n = net.num_cells();
  if (pd.size() != n) throw Error(ErrorCode::LengthMismatch, "problem data does not match the network");
  if (!(opts.epsilon > 0.0)) throw Error(ErrorCode::InvalidStepSize, "step size must be positive");

  const double tolerance = opts.tolerance > 0.0 ? opts.tolerance : default_tolerance(opts.epsilon);
  const std::size_t diameter = net.communication_diameter();
  const std::size_t max_order = opts.max_order > 0 ? opts.max_order : std::max<std::size_t>(n, 1);

  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> fixed_points;
  if (opts.faults.adversarial_start) {
    const TurningMatrices tm = turning_matrices(net);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(tm.g);
    fixed_points.emplace(lu.solve(pd.w), Eigen::PartialPivLU<Eigen::MatrixXd>(tm.g.transpose()).solve(pd.x0));
  }

  DistributedReport rep;
  for (int attempt = 0;; ++attempt) {
    std::vector<Agent> agents;
    agents.reserve(n);
    for (CellIndex i = 0; i < n; ++i) {
      AgentConfig cfg = make_agent_config(net, pd, i);
      cfg.epsilon = opts.epsilon;
      cfg.tolerance = tolerance;
      cfg.verify_tol = opts.verify_tol;
      cfg.max_order = max_order;
      cfg.diameter = diameter;
      cfg.max_outer = opts.max_outer;
      cfg.seed = opts.seed + static_cast<std::uint64_t>(attempt) * 0x9E3779B97F4A7C15ull;
      cfg.detector = opts.detector;
      if (attempt == 0 && fixed_points) {
        const auto k = static_cast<Eigen::Index>(i);
        cfg.first_learning_start.emplace(fixed_points->first(k), fixed_points->second(k));
      }
      if (attempt == 0 && opts.faults.corrupt_theta_at == i) cfg.corrupt_zeta_theta = opts.faults.corrupt_theta_by;
      agents.emplace_back(std::move(cfg));
    }
    InProcessBus bus(net);
    if (attempt == 0 && opts.faults.drop) bus.schedule_drop(*opts.faults.drop);

    rep.eta_trace.clear();
    if (opts.record_eta) {
      rep.eta_trace.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n) * kMultipliersPerCell));
    }

    std::vector<Envelope> sent;
    for (auto& a : agents) {
      auto out = a.start();
      sent.insert(sent.end(), std::make_move_iterator(out.begin()), std::make_move_iterator(out.end()));
    }
    std::size_t round = 0;
    int last_k = 0;
    std::string failure;
    std::vector<std::vector<Envelope>> outs(n);
    std::vector<std::exception_ptr> errors(n);
    try {
      while (!std::all_of(agents.begin(), agents.end(), [](const Agent& a) { return a.done(); })) {
        auto inboxes = bus.deliver(round, std::move(sent));
        ++round;
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (!opts.serial && n >= kParallelAgents)
        for (std::ptrdiff_t i = 0; i < count; ++i) {
          const auto u = static_cast<std::size_t>(i);
          try {
            outs[u] = agents[u].round(inboxes[u]);
          } catch (...) {
            errors[u] = std::current_exception();
          }
        }
        for (auto& e : errors) {
          if (e) std::rethrow_exception(e);
        }
        sent.clear();
        for (auto& o : outs) {
          sent.insert(sent.end(), std::make_move_iterator(o.begin()), std::make_move_iterator(o.end()));
          o.clear();
        }
        if (opts.record_eta && agents.front().outer_iteration() != last_k) {
          last_k = agents.front().outer_iteration();
          rep.eta_trace.push_back(stacked_eta(agents));
        }
        if (agents.front().learnings() > kMaxLearnings) {
          throw Error(ErrorCode::NonConvergence, "final-value learning keeps failing verification");
        }
      }
      if (!sent.empty()) throw Error(ErrorCode::ProtocolViolation, "messages sent after every agent finished");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProtocolViolation) throw;
      failure = e.what();
    }

    rep.messages += bus.delivered();
    rep.dropped += bus.dropped();
    rep.rounds += round;
    if (!failure.empty()) {
      spdlog::warn("distributed solve attempt {} aborted: {}", attempt, failure);
      rep.protocol_errors.push_back(failure);
      ++rep.restarts;
      if (rep.restarts > opts.max_restarts) throw Error(ErrorCode::ProtocolViolation, failure);
      continue;
    }

    rep.f.resize(static_cast<Eigen::Index>(n));
    rep.d_zeta.clear();
    rep.d_flow.clear();
    rep.converged = true;
    for (std::size_t i = 0; i < n; ++i) {
      rep.f(static_cast<Eigen::Index>(i)) = agents[i].flow();
      rep.d_zeta.push_back(agents[i].d_zeta());
      rep.d_flow.push_back(agents[i].d_flow());
      rep.converged = rep.converged && agents[i].converged();
    }
    rep.eta = stacked_eta(agents);
    rep.d_max = agents.front().d_max();
    rep.outer_iterations = agents.front().outer_iteration();
    rep.learnings = agents.front().learnings();
    rep.violations = rep.learnings - 1;
    if (!rep.converged) {
      throw Error(ErrorCode::NonConvergence,
                  fmt::format("multipliers still moving after {} outer iterations", rep.outer_iterations));
    }
    return rep;
  }
}

}  // namespace ctmflow
