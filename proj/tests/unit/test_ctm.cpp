#include <random>

#include <gtest/gtest.h>

#include "ctmflow/ctm.hpp"
#include "ctmflow/error.hpp"
#include "fixtures.hpp"

using namespace ctmflow;

namespace {

CellParams trapezoid_cell(double capacity = 100.0) {
  CellParams p;
  p.rho_cg = 300.0;
  p.rho_cr = 120.0;
  p.demand_supply = Trapezoid{capacity};
  return p;
}

CellParams tabulated_cell() {
  CellParams p;
  p.rho_cg = 300.0;
  p.rho_cr = 100.0;
  p.demand_supply = Tabulated{{0, 100, 200, 300}, {0, 80, 90, 90}, {120, 80, 40, 0}};
  return p;
}

}  // namespace

TEST(Ctm, DiagramAnchors) {
  for (const CellParams& p : {trapezoid_cell(), tabulated_cell()}) {
    EXPECT_EQ(demand(p, 0.0), 0.0);
    EXPECT_EQ(supply(p, p.rho_cg), 0.0);
    EXPECT_EQ(supply(p, 2.0 * p.rho_cg), 0.0);
    EXPECT_NEAR(demand(p, p.rho_cr), supply(p, p.rho_cr), 1e-12);
  }
  EXPECT_NEAR(demand(trapezoid_cell(), 60.0), 50.0, 1e-12);
  EXPECT_NEAR(demand(tabulated_cell(), 150.0), 85.0, 1e-12);
}

TEST(CtmProperty, DiagramsAreMonotone) {
  for (const CellParams& p : {trapezoid_cell(), trapezoid_cell(0.0), tabulated_cell()}) {
    double last_d = demand(p, 0.0), last_s = supply(p, 0.0);
    for (int k = 1; k <= 400; ++k) {
      const double rho = k;
      EXPECT_GE(demand(p, rho), last_d);
      EXPECT_LE(supply(p, rho), last_s);
      last_d = demand(p, rho);
      last_s = supply(p, rho);
    }
  }
}

TEST(Ctm, RejectsBadInputs) {
  EXPECT_THROW(demand(trapezoid_cell(), -1.0), Error);
  try {
    supply(trapezoid_cell(), -1e-3);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NegativeVolume);
  }
  CellParams p = trapezoid_cell();
  p.rho_cr = 400.0;
  EXPECT_THROW(validate(p), Error);
  p = trapezoid_cell();
  p.a = 0.0;
  EXPECT_THROW(validate(p), Error);
  p = tabulated_cell();
  std::get<Tabulated>(p.demand_supply).supply[1] = 130.0;
  EXPECT_THROW(validate(p), Error);
}

TEST(Ctm, StepDynamicsTandem) {
  const Network net = Network::build(fixtures::tandem(3));
  Eigen::MatrixXd r = turning_matrices(net).nominal;
  Eigen::Vector3d rho(10, 20, 30), f(5, 7, 9), mu(4, 0, 0);
  const Eigen::VectorXd next = step_dynamics(net, rho, f, r, mu);
  EXPECT_TRUE(next.isApprox(Eigen::Vector3d(9, 18, 28)));
  f(2) = 40.0;
  EXPECT_THROW(step_dynamics(net, rho, f, r, mu), Error);
}

// Vehicles are only created at entries and only leave through exits.
TEST(CtmProperty, ConservationWithRowStochasticSplits) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Network net = Network::build(fixtures::random_network(rng, 3, 6));
    const auto n = static_cast<Eigen::Index>(net.num_cells());
    const Eigen::MatrixXd r = turning_matrices(net).nominal;
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(n, 100.0);
    const Eigen::VectorXd f = (Eigen::VectorXd::Random(n).array() + 1.0) * 10.0;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
    double exits = 0.0;
    for (CellIndex i = 0; i < net.num_cells(); ++i) {
      if (net.is_source(i)) mu(static_cast<Eigen::Index>(i)) = 3.0;
      if (net.is_destination(i)) exits += f(static_cast<Eigen::Index>(i));
    }
    const Eigen::VectorXd next = step_dynamics(net, rho, f, r, mu);
    EXPECT_NEAR(next.sum(), rho.sum() + mu.sum() - exits, 1e-9);
  }
}

TEST(Ctm, AssembleProblemConstants) {
  const fixtures::Instance inst = fixtures::grid_cycle(50.0);
  const ProblemData& pd = inst.pd;
  for (CellIndex i = 0; i < inst.net.num_cells(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const CellParams& p = inst.params[i];
    EXPECT_DOUBLE_EQ(pd.x0(k), inst.inputs.rho(k) + inst.inputs.mu_nominal(k));
    EXPECT_DOUBLE_EQ(pd.x_lower(k), inst.inputs.rho(k) + inst.inputs.mu_lower(k));
    EXPECT_DOUBLE_EQ(pd.x_upper(k), p.rho_cg - inst.inputs.rho(k) - inst.inputs.mu_upper(k));
    EXPECT_DOUBLE_EQ(pd.s_upper(k), supply(p, inst.inputs.rho(k)));
    EXPECT_NEAR(pd.f_upper(k), std::min(demand(p, inst.inputs.rho(k)), pd.T / pd.v(k)), 1e-12);
    EXPECT_GT(pd.v(k), 0.0);
  }
}

TEST(Ctm, AssembleProblemRejectsBadInputs) {
  fixtures::Instance inst = fixtures::grid_cycle(50.0);
  CycleInputs in = inst.inputs;
  in.rho(0) = 400.0;
  EXPECT_THROW(assemble_problem(inst.net, inst.params, in), Error);

  in = inst.inputs;
  const CellIndex inner = inst.net.index_of(6);
  in.mu_upper(static_cast<Eigen::Index>(inner)) = 1.0;
  EXPECT_THROW(assemble_problem(inst.net, inst.params, in), Error);

  in = inst.inputs;
  for (CellIndex i = 0; i < inst.net.num_cells(); ++i) {
    if (inst.net.is_source(i)) {
      const auto k = static_cast<Eigen::Index>(i);
      in.rho(k) = 250.0;
      in.mu_upper(k) = 100.0;
      in.mu_nominal(k) = std::min(in.mu_nominal(k), 100.0);
      in.mu_lower(k) = std::min(in.mu_lower(k), in.mu_nominal(k));
      try {
        assemble_problem(inst.net, inst.params, in);
        ADD_FAILURE() << "over-full entry accepted";
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InfeasibleBounds);
      }
      break;
    }
  }
  EXPECT_THROW(assemble_problem(inst.net, std::vector<CellParams>(3), inst.inputs), Error);
}
