#pragma once

#include <vector>

#include "nica/block_cov.hpp"
#include "nica/processes.hpp"

namespace nica {

/// Conjugate site attached to one pseudo location: a Gaussian-form factor
/// exp(-0.5 u' (W'W) u + u' m) over the N pseudo values at that location.
struct PseudoFactor {
  Mat w_tilde;  // N x N lower-triangular with positive diagonal
  Vec m_tilde;  // N

  Mat lambda() const { return w_tilde.transpose() * w_tilde; }
  void validate() const;
};

/// Variational parameters for one data sample.  Pseudo locations are shared
/// across samples by the trainer but stored here so the posterior algebra is
/// self-contained.
struct VariationalState {
  std::vector<PseudoFactor> factors;        // one per pseudo location
  Mat pseudo_locations;                     // J x d
  std::vector<GammaParams> tau_posteriors;  // one per component
  bool factorized = false;  // restrict coupling to per-component diagonals

  int n_pseudo() const { return static_cast<int>(factors.size()); }
  void validate(int n_components) const;
};

/// Gaussian conditional q(u | tau) in factored form.  The precision
/// K_uu^{-1} + Lambda is never materialized: everything downstream works
/// from the two Cholesky factors (L of K_uu, C of B = I + L' Lambda L).
struct ConditionalPosterior {
  Mat chol_kuu;  // L, lower
  Mat chol_b;    // C, lower
  Vec m_stacked;
  Vec h;  // posterior mean of the pseudo values
  double log_normalizer = 0.0;

  // Per-component conditionals when built in factorized mode.
  std::vector<ConditionalPosterior> per_component;
  bool factorized() const { return !per_component.empty(); }

  /// Dense precision matrix, reconstructed via triangular solves.  Intended
  /// for diagnostics and tests, not for hot paths.
  Mat precision() const;
  /// Dense posterior covariance of the pseudo values (same caveat).
  Mat posterior_cov() const;
};

ConditionalPosterior build_conditional(const BlockCovariance& cov,
                                       const VariationalState& state);

struct MarginalBlocks {
  Mat means;              // m x N, row l holds the components at location l
  std::vector<Mat> covs;  // m covariance blocks, each N x N
};

/// Location-wise marginals of the approximate component posterior; only the
/// m diagonal N x N covariance blocks are formed.
MarginalBlocks marginal_qs(const BlockCovariance& cov,
                           const ConditionalPosterior& cond);

/// KL divergence from q(u | tau) to the prior p(u | tau).
double kl_u(const BlockCovariance& cov, const VariationalState& state,
            const ConditionalPosterior& cond);

/// Restriction of the joint quantities to a single component (used by the
/// factorized path and by tests).
BlockCovariance extract_component(const BlockCovariance& cov, int comp);
VariationalState extract_component(const VariationalState& state, int comp);

}  // namespace nica
