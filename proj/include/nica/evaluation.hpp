#pragma once

#include <cstdint>
#include <vector>

#include "nica/common.hpp"
#include "nica/elbo.hpp"

namespace nica {

/// Maximum-total-score perfect matching on a square score matrix.
/// Returns, for each row, the assigned column.  O(n^3).
std::vector<int> best_assignment(const Mat& scores);

/// Exhaustive matching over all permutations; small n only.  Used to
/// cross-check the polynomial solver.
std::vector<int> best_assignment_bruteforce(const Mat& scores);

struct MccOptions {
  bool per_sample = false;  // average per-sample scores instead of pooling
  bool spearman = false;    // rank-transform every series first
};

struct MccReport {
  double mcc = 0.0;
  std::vector<int> matching;  // estimated component index -> true index
  Mat abs_correlations;       // pooled |correlation|, estimated x true
};

/// Mean correlation coefficient between estimated and ground-truth
/// components under the best one-to-one matching.  Inputs are per-sample
/// n x m matrices (components in rows).
MccReport mean_corr_coeff(const std::vector<Mat>& estimated,
                          const std::vector<Mat>& truth,
                          const MccOptions& opts = {});

struct IcaOptions {
  double tol = 1e-6;
  int max_iter = 500;
};

struct IcaResult {
  std::vector<Mat> components;  // per sample, n x m
  bool converged = true;
  int iterations = 0;
};

/// Linear ICA baseline: PCA whitening to n dimensions followed by a
/// symmetric fixed-point rotation search with a tanh contrast, run on the
/// samples pooled along the location axis.
IcaResult linear_ica(const std::vector<Mat>& observations, int n_components,
                     std::uint64_t seed, const IcaOptions& opts = {});

/// Posterior point estimates of the latent components: marginal means with
/// the scale variables fixed at their posterior means.  One n x m matrix per
/// sample.
std::vector<Mat> extract_components(const TpNicaModel& model,
                                    const std::vector<VariationalState>& states,
                                    const Lattice& lattice);

}  // namespace nica
