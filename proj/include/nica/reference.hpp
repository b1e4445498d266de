#pragma once

// Serial, dense reference implementations of the performance-critical kernels.
//
// These mirror the production code paths with deliberately naive algebra:
// explicit matrix inverses instead of Cholesky solves, plain double loops
// instead of vectorized or OpenMP-parallel batches. They exist so tests can
// cross-check the optimized paths against an independent derivation, and so
// the benchmark target can quantify what the optimized paths buy.

#include "nica/block_cov.hpp"
#include "nica/lattice.hpp"
#include "nica/mixing.hpp"
#include "nica/posterior.hpp"

namespace nica::reference {

/// Posterior over pseudo values and induced marginals, computed densely.
struct DensePosterior {
  Vec mean_u;                 ///< posterior mean of the stacked pseudo values
  Mat cov_u;                  ///< posterior covariance of the stacked pseudo values
  double log_normalizer = 0;  ///< log of the site-weighted prior integral
  MarginalBlocks marginals;   ///< location-wise means and covariance blocks
  double kl_u = 0;            ///< same contract as nica::kl_u
};

/// Computes the conditional posterior by explicit dense inversion.
DensePosterior dense_posterior(const BlockCovariance& cov,
                               const VariationalState& state);

/// Kernel cross-covariance via plain scalar loops.
Mat kernel_matrix_serial(const Mat& a, const Mat& b, const KernelSpec& spec);

/// Decoder forward pass via plain scalar loops.
Mat mix_serial(const MixingNetwork& net, const Mat& s);

}  // namespace nica::reference
