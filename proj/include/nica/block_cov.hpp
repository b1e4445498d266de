#pragma once

#include <vector>

#include "nica/lattice.hpp"

namespace nica {

/// Joint covariance over N independent component fields evaluated at m
/// lattice locations (s) and J pseudo locations (u).  Storage is
/// location-major: index l*N + i addresses component i at location l, so
/// every location pair contributes an N x N diagonal block.
struct BlockCovariance {
  Mat k_ss;  // (m*N) x (m*N)
  Mat k_su;  // (m*N) x (J*N)
  Mat k_uu;  // (J*N) x (J*N)
  int n_components = 0;
  int n_locations = 0;
  int n_pseudo = 0;
  double jitter = 0.0;
};

/// Conditioning jitter used throughout: a fixed fraction of the largest
/// kernel variance, added to the s and u diagonals at assembly time.
double covariance_jitter(const std::vector<KernelSpec>& kernels);

BlockCovariance assemble_covariance(const Lattice& lattice, const Mat& pseudo,
                                    const std::vector<KernelSpec>& kernels);

/// Divides every entry belonging to component i by taus[i].  The jittered
/// diagonal scales along with the rest, keeping one code path for both the
/// unit-scale and mixed-scale cases.
BlockCovariance scale_by_tau(const BlockCovariance& cov, const Vec& taus);

/// Permutation taking location-major indices to component-major ones:
/// out[i*groups + g] = g*n_components + i.
std::vector<int> component_major_permutation(int groups, int n_components);

/// Applies index permutations to rows and columns (empty = identity).
Mat permute_matrix(const Mat& a, const std::vector<int>& row_perm,
                   const std::vector<int>& col_perm);

}  // namespace nica
