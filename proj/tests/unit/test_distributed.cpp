#include <random>

#include <gtest/gtest.h>

#include "ctmflow/centralized.hpp"
#include "ctmflow/distributed.hpp"
#include "ctmflow/error.hpp"
#include "ctmflow/qp_core.hpp"
#include "fixtures.hpp"

using namespace ctmflow;

namespace {

DistributedOptions options_for(const AssembledMatrices& am) {
  DistributedOptions opts;
  opts.epsilon = step_size(am, 0.9);
  opts.seed = 7;
  return opts;
}

SolveReport centralized(const AssembledMatrices& am, const ProblemData& pd) {
  SolveOptions opts;
  opts.epsilon = step_size(am, 0.9);
  return solve(am, pd, opts);
}

std::map<CellIndex, std::array<double, 4>> shared_of(const Network& net, const Eigen::VectorXd& eta) {
  std::map<CellIndex, std::array<double, 4>> out;
  for (CellIndex j = 0; j < net.num_cells(); ++j) {
    out[j] = {eta(eta_index(j, kLambda)), eta(eta_index(j, kTheta)), eta(eta_index(j, kNu)),
              eta(eta_index(j, kGamma))};
  }
  return out;
}

LocalEta local_of(CellIndex i, const Eigen::VectorXd& eta) {
  LocalEta e{};
  for (int m = 0; m < kMultipliersPerCell; ++m) e[m] = eta(eta_index(i, static_cast<Multiplier>(m)));
  return e;
}

NeighborValues all_values(const Eigen::VectorXd& v) {
  NeighborValues out;
  for (Eigen::Index k = 0; k < v.size(); ++k) out[static_cast<CellIndex>(k)] = v(k);
  return out;
}

}  // namespace

TEST(Wire, RoundTripsSeveralRecords) {
  const Message a{3, MessageKind::EtaNeededValues, {1.5, -0.0, 1e-300, 4.0}};
  const Message b{70000, MessageKind::FinalFlag, {}};
  std::vector<std::uint8_t> bytes = encode(a);
  const auto more = encode(b);
  bytes.insert(bytes.end(), more.begin(), more.end());
  std::size_t offset = 0;
  EXPECT_EQ(decode(bytes, offset), a);
  EXPECT_EQ(decode(bytes, offset), b);
  EXPECT_EQ(offset, bytes.size());
  EXPECT_EQ(encode(a).size(), 4u + 4u + 1u + 32u);
}

TEST(Wire, RejectsMalformedRecords) {
  const auto bytes = encode(Message{1, MessageKind::ZetaValue, {2.0}});
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::size_t offset = 0;
    EXPECT_THROW(decode(std::span(bytes).first(cut), offset), Error) << "cut " << cut;
  }
  auto bad_kind = bytes;
  bad_kind[8] = 99;
  std::size_t offset = 0;
  try {
    decode(bad_kind, offset);
    ADD_FAILURE() << "unknown kind accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
  }
}

// The local recursions are the rows of the centralized linear systems.
TEST(Distributed, LocalStepsMatchCentralizedRows) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 15; ++trial) {
    const fixtures::Instance inst = fixtures::random_instance(rng);
    const AssembledMatrices am = build_matrices(inst.net, inst.pd);
    const Eigen::Index n = am.G.rows();
    Eigen::VectorXd eta = Eigen::VectorXd::Random(am.Q.rows()).cwiseAbs();
    const Eigen::VectorXd h = am.H * eta + inst.pd.w;
    const Eigen::VectorXd zeta = Eigen::VectorXd::Random(n);
    const Eigen::VectorXd flow = Eigen::VectorXd::Random(n) * 10.0;
    const Eigen::VectorXd x_star = Eigen::VectorXd::Random(n) * 10.0;
    const Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n) - am.G;
    const double epsilon = 0.01;
    Eigen::VectorXd next = (eta + epsilon * (am.Q * flow + am.q)).cwiseMax(0.0);
    for (Eigen::Index c = 0; c < n; ++c) {
      RowReduction::plan(local_rows(am.Q, am.q, static_cast<CellIndex>(c)))
          .apply(std::span<double, kMultipliersPerCell>(next.data() + c * kMultipliersPerCell, kMultipliersPerCell));
    }
    const auto shared = shared_of(inst.net, eta);
    for (CellIndex i = 0; i < inst.net.num_cells(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      AgentConfig cfg = make_agent_config(inst.net, inst.pd, i);
      cfg.epsilon = epsilon;
      EXPECT_NEAR(local_h(cfg, local_of(i, eta), shared), h(k), 1e-10);
      EXPECT_NEAR(jacobi_zeta_step(cfg, all_values(zeta), h(k)), r.row(k).dot(zeta) + h(k), 1e-10);
      EXPECT_NEAR(jacobi_flow_step(cfg, all_values(flow), x_star(k)),
                  r.col(k).dot(flow) + inst.pd.x0(k) - x_star(k), 1e-10);
      const LocalRows mine = local_rows(cfg), global = local_rows(am.Q, am.q, i);
      EXPECT_EQ(mine.normal, global.normal);
      EXPECT_EQ(mine.rhs, global.rhs);
      const LocalEta stepped = eta_step(cfg, local_of(i, eta), all_values(flow));
      for (int m = 0; m < kMultipliersPerCell; ++m) {
        EXPECT_NEAR(stepped[m], next(eta_index(i, static_cast<Multiplier>(m))), 1e-10);
      }
    }
  }
}

TEST(Distributed, MissingNeighbourValueIsReported) {
  const fixtures::Instance inst = fixtures::grid_cycle(50.0);
  const CellIndex i = inst.net.index_of(6);
  const AgentConfig cfg = make_agent_config(inst.net, inst.pd, i);
  try {
    jacobi_zeta_step(cfg, {}, 0.0);
    ADD_FAILURE() << "empty neighbour map accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingNeighborValue);
  }
}

TEST(Distributed, VerifyFlagsInconsistentFinals) {
  const Network net = Network::build(fixtures::tandem(2));
  AgentConfig cfg;
  cfg.cell = 0;
  cfg.downstream = {{1, 1.0, 1.0, 1.0}};
  cfg.x0 = 4.0;
  std::map<CellIndex, Finals> nb{{1, {2.0, 0.0}}};
  EXPECT_EQ(verify_and_recover(cfg, 1.0, 1.0, {3.0, 3.0}, nb), VerifyStatus::Ok);
  EXPECT_EQ(verify_and_recover(cfg, 1.0, 1.0, {3.5, 3.0}, nb), VerifyStatus::Violation);
  EXPECT_EQ(verify_and_recover(cfg, 1.0, 1.0, {3.0, 2.0}, nb), VerifyStatus::Violation);
}

TEST(Distributed, BusEnforcesLocality) {
  const Network net = grid_network(2, 2);
  InProcessBus bus(net);
  const CellIndex a = 0;
  CellIndex far = 0;
  const auto comm = net.communication_neighbors(a);
  for (CellIndex j = 1; j < net.num_cells(); ++j) {
    if (std::find(comm.begin(), comm.end(), j) == comm.end()) {
      far = j;
      break;
    }
  }
  ASSERT_NE(far, 0u);
  try {
    bus.deliver(0, {{far, Message{static_cast<std::uint32_t>(a), MessageKind::ZetaValue, {1.0}}}});
    ADD_FAILURE() << "non-neighbour message delivered";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LocalityViolation);
  }
  const auto inboxes = bus.deliver(1, {{comm.front(), Message{0, MessageKind::ZetaValue, {1.0}}}});
  ASSERT_EQ(inboxes[comm.front()].size(), 1u);
  EXPECT_EQ(bus.delivered(), 1u);
}

TEST(Distributed, MatchesCentralizedOnGridCycle) {
  const fixtures::Instance inst = fixtures::grid_cycle(50.0);
  const AssembledMatrices am = build_matrices(inst.net, inst.pd);
  const DistributedReport rep = distributed_solve(inst.net, inst.pd, options_for(am));
  const SolveReport ref = centralized(am, inst.pd);
  EXPECT_TRUE(rep.converged);
  EXPECT_LT((rep.f - ref.f_opt).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(max_violation(am.Q, am.q, rep.f), 1e-8);
  EXPECT_EQ(rep.learnings, 1);
  EXPECT_EQ(rep.violations, 0);
  EXPECT_GE(rep.d_max, 2u);
  EXPECT_LE(rep.d_max, 2 * inst.net.num_cells() + 2);
}

TEST(Distributed, DeterministicAndKernelIndependent) {
  const fixtures::Instance inst = fixtures::grid_cycle(120.0);
  const AssembledMatrices am = build_matrices(inst.net, inst.pd);
  DistributedOptions opts = options_for(am);
  opts.max_outer = 60;
  opts.tolerance = 1e-300;
  EXPECT_THROW(distributed_solve(inst.net, inst.pd, opts), Error);
  opts.max_outer = 50'000;
  opts.tolerance = 0.0;
  const DistributedReport a = distributed_solve(inst.net, inst.pd, opts);
  const DistributedReport b = distributed_solve(inst.net, inst.pd, opts);
  opts.serial = true;
  const DistributedReport c = distributed_solve(inst.net, inst.pd, opts);
  EXPECT_EQ(a.f, b.f);
  EXPECT_EQ(a.f, c.f);
  EXPECT_EQ(a.outer_iterations, c.outer_iterations);
  EXPECT_EQ(a.messages, b.messages);
}

TEST(DistributedFaults, DroppedMessageRestartsProtocol) {
  const fixtures::Instance inst = fixtures::grid_cycle(50.0);
  const AssembledMatrices am = build_matrices(inst.net, inst.pd);
  DistributedOptions opts = options_for(am);
  opts.faults.drop = DropFault{3, 5, inst.net.downstream(5)[0]};
  const DistributedReport rep = distributed_solve(inst.net, inst.pd, opts);
  EXPECT_EQ(rep.dropped, 1u);
  EXPECT_EQ(rep.restarts, 1);
  ASSERT_EQ(rep.protocol_errors.size(), 1u);
  EXPECT_TRUE(rep.converged);
  EXPECT_LT((rep.f - centralized(am, inst.pd).f_opt).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(DistributedFaults, CorruptCoefficientsAreDetectedAndRelearned) {
  const fixtures::Instance inst = fixtures::grid_cycle(50.0);
  const AssembledMatrices am = build_matrices(inst.net, inst.pd);
  DistributedOptions opts = options_for(am);
  opts.faults.corrupt_theta_at = inst.net.index_of(7);
  const DistributedReport rep = distributed_solve(inst.net, inst.pd, opts);
  EXPECT_GE(rep.violations, 1);
  EXPECT_GE(rep.learnings, 2);
  EXPECT_TRUE(rep.converged);
  EXPECT_LT((rep.f - centralized(am, inst.pd).f_opt).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(DistributedFaults, FixedPointStartIsRecovered) {
  const fixtures::Instance inst = fixtures::grid_cycle(50.0);
  const AssembledMatrices am = build_matrices(inst.net, inst.pd);
  DistributedOptions opts = options_for(am);
  opts.faults.adversarial_start = true;
  const DistributedReport rep = distributed_solve(inst.net, inst.pd, opts);
  EXPECT_GE(rep.violations, 1);
  EXPECT_TRUE(rep.converged);
  EXPECT_LT((rep.f - centralized(am, inst.pd).f_opt).cwiseAbs().maxCoeff(), 1e-6);
}
