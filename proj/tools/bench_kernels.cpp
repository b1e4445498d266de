#include <benchmark/benchmark.h>

#include <vector>

#include "nica/block_cov.hpp"
#include "nica/lattice.hpp"
#include "nica/mixing.hpp"
#include "nica/posterior.hpp"
#include "nica/reference.hpp"
#include "nica/rng.hpp"

namespace {

using nica::BlockCovariance;
using nica::KernelSpec;
using nica::Lattice;
using nica::Mat;
using nica::MixingNetwork;
using nica::Vec;

struct Fixture {
  Lattice lattice;
  std::vector<KernelSpec> kernels;
  BlockCovariance cov;
  nica::VariationalState state;
  MixingNetwork net;
  Mat components;

  Fixture(int side, int n, int j) {
    lattice = nica::make_grid({side, side});
    for (int i = 0; i < n; ++i) {
      kernels.push_back({1.0 + static_cast<double>(i), 1.0});
    }
    nica::Rng rng = nica::make_stream(7, nica::StreamTag::Misc, side, n);
    Mat pseudo(j, lattice.dim());
    for (long r = 0; r < pseudo.rows(); ++r) {
      for (long c = 0; c < pseudo.cols(); ++c) {
        pseudo(r, c) = rng.uniform() * static_cast<double>(side - 1);
      }
    }
    cov = nica::assemble_covariance(lattice, pseudo, kernels);
    state.pseudo_locations = pseudo;
    for (int q = 0; q < j; ++q) {
      nica::PseudoFactor f;
      Mat w(n, n);
      for (long r = 0; r < n; ++r) {
        for (long c = 0; c < n; ++c) {
          w(r, c) = c < r ? 0.3 * rng.normal() : 0.0;
        }
        w(r, r) = 1.0 + rng.uniform();
      }
      f.w_tilde = w;
      f.m_tilde = Vec::Zero(n);
      for (long r = 0; r < n; ++r) f.m_tilde[r] = rng.normal();
      state.factors.push_back(std::move(f));
    }
    for (int i = 0; i < n; ++i) state.tau_posteriors.push_back({2.0, 2.0});
    net = nica::make_ground_truth_mixing(n, 2 * n, 2, 11);
    components.resize(n, lattice.count());
    for (long r = 0; r < components.rows(); ++r) {
      for (long c = 0; c < components.cols(); ++c) {
        components(r, c) = rng.normal();
      }
    }
  }
};

const Fixture& fixture_for(int side) {
  static Fixture small(8, 3, 9);
  static Fixture medium(16, 3, 25);
  static Fixture large(24, 3, 25);
  if (side <= 8) return small;
  if (side <= 16) return medium;
  return large;
}

void BM_kernel_matrix_parallel(benchmark::State& st) {
  const Fixture& fx = fixture_for(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Mat k = nica::kernel_matrix(fx.kernels.front(), fx.lattice.locations,
                                fx.lattice.locations);
    benchmark::DoNotOptimize(k.data());
  }
}

void BM_kernel_matrix_serial(benchmark::State& st) {
  const Fixture& fx = fixture_for(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Mat k = nica::reference::kernel_matrix_serial(
        fx.lattice.locations, fx.lattice.locations, fx.kernels.front());
    benchmark::DoNotOptimize(k.data());
  }
}

void BM_marginals_parallel(benchmark::State& st) {
  const Fixture& fx = fixture_for(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    nica::ConditionalPosterior cond = nica::build_conditional(fx.cov, fx.state);
    nica::MarginalBlocks mb = nica::marginal_qs(fx.cov, cond);
    double kl = nica::kl_u(fx.cov, fx.state, cond);
    benchmark::DoNotOptimize(mb.means.data());
    benchmark::DoNotOptimize(kl);
  }
}

void BM_marginals_dense(benchmark::State& st) {
  const Fixture& fx = fixture_for(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    nica::reference::DensePosterior dp =
        nica::reference::dense_posterior(fx.cov, fx.state);
    benchmark::DoNotOptimize(dp.marginals.means.data());
    benchmark::DoNotOptimize(dp.kl_u);
  }
}

void BM_mix_parallel(benchmark::State& st) {
  const Fixture& fx = fixture_for(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Mat x = nica::mix(fx.net, fx.components);
    benchmark::DoNotOptimize(x.data());
  }
}

void BM_mix_serial(benchmark::State& st) {
  const Fixture& fx = fixture_for(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Mat x = nica::reference::mix_serial(fx.net, fx.components);
    benchmark::DoNotOptimize(x.data());
  }
}

}  // namespace

BENCHMARK(BM_kernel_matrix_parallel)->Arg(8)->Arg(16)->Arg(24);
BENCHMARK(BM_kernel_matrix_serial)->Arg(8)->Arg(16)->Arg(24);
BENCHMARK(BM_marginals_parallel)->Arg(8)->Arg(16);
BENCHMARK(BM_marginals_dense)->Arg(8)->Arg(16);
BENCHMARK(BM_mix_parallel)->Arg(16)->Arg(24);
BENCHMARK(BM_mix_serial)->Arg(16)->Arg(24);

BENCHMARK_MAIN();
