// Serial reference kernels against their OpenMP versions, plus whole solves.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "ctmflow/centralized.hpp"
#include "ctmflow/harness.hpp"
#include "ctmflow/kernels.hpp"
#include "ctmflow/network.hpp"
#include "ctmflow/qp_core.hpp"

namespace {

using namespace ctmflow;

std::vector<double> random_vector(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Serial>
void BM_AffineSweep(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const kernels::RowSparse r = nominal_sparse(grid_network(side, side));
  const auto n = r.rows();
  const std::vector<double> x = random_vector(n, 1), c = random_vector(n, 2);
  std::vector<double> out(x.size());
  for (auto _ : state) {
    if constexpr (Serial) {
      kernels::serial::affine_sweep(r, x, c, out);
    } else {
      kernels::affine_sweep(r, x, c, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["cells"] = static_cast<double>(n);
}

template <bool Serial>
void BM_Gemv(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
  const std::vector<double> x = random_vector(n, 3);
  std::vector<double> out(x.size());
  for (auto _ : state) {
    if constexpr (Serial) {
      kernels::serial::gemv(a, x, out);
    } else {
      kernels::gemv(a, x, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Serial>
void BM_ProjectedAscent(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  const std::vector<double> grad = random_vector(n, 4);
  std::vector<double> eta(grad.size(), 0.0);
  for (auto _ : state) {
    double change = 0.0;
    if constexpr (Serial) {
      change = kernels::serial::projected_ascent(eta, grad, 1e-3);
    } else {
      change = kernels::projected_ascent(eta, grad, 1e-3);
    }
    benchmark::DoNotOptimize(change);
  }
}

void BM_CentralizedCycle(benchmark::State& state) {
  SimConfig cfg;
  cfg.m = cfg.n = static_cast<int>(state.range(0));
  const Network net = grid_network(cfg.m, cfg.n);
  const auto params = experiment_params(net, cfg);
  const auto nn = static_cast<Eigen::Index>(net.num_cells());
  CycleInputs in;
  in.T = cfg.T;
  in.rho = Eigen::VectorXd::Constant(nn, 60.0);
  in.mu_nominal = in.mu_lower = in.mu_upper = Eigen::VectorXd::Zero(nn);
  for (CellIndex i = 0; i < net.num_cells(); ++i) {
    if (!net.is_source(i)) continue;
    const auto k = static_cast<Eigen::Index>(i);
    in.mu_lower(k) = cfg.q_in;
    in.mu_nominal(k) = 1.05 * cfg.q_in;
    in.mu_upper(k) = 1.1 * cfg.q_in;
  }
  const ProblemData pd = assemble_problem(net, params, in);
  const AssembledMatrices am = build_matrices(net, pd);
  SolveOptions opts;
  opts.epsilon = step_size(am, cfg.safety);
  opts.serial = state.range(1) != 0;
  for (auto _ : state) {
    const SolveReport rep = solve(am, pd, opts);
    benchmark::DoNotOptimize(rep.f_opt.data());
    state.counters["iterations"] = rep.iterations;
  }
}

}  // namespace

BENCHMARK(BM_AffineSweep<true>)->Arg(5)->Arg(20)->Arg(60);
BENCHMARK(BM_AffineSweep<false>)->Arg(5)->Arg(20)->Arg(60);
BENCHMARK(BM_Gemv<true>)->Arg(64)->Arg(512)->Arg(2048);
BENCHMARK(BM_Gemv<false>)->Arg(64)->Arg(512)->Arg(2048);
BENCHMARK(BM_ProjectedAscent<true>)->Arg(1 << 10)->Arg(1 << 16);
BENCHMARK(BM_ProjectedAscent<false>)->Arg(1 << 10)->Arg(1 << 16);
BENCHMARK(BM_CentralizedCycle)->Args({2, 1})->Args({2, 0})->Args({4, 1})->Args({4, 0})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
