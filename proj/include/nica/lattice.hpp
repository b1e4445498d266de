#pragma once

#include <vector>

#include "nica/common.hpp"

namespace nica {

/// Finite indexing set: m locations in R^d, stored one per row.
struct Lattice {
  Mat locations;  // m x d

  int count() const { return static_cast<int>(locations.rows()); }
  int dim() const { return static_cast<int>(locations.cols()); }
};

/// Regular grid with the given per-axis extents and spacing; rows are emitted
/// in row-major order over the axes.
Lattice make_grid(const std::vector<int>& shape, double spacing = 1.0);

/// Squared-exponential kernel parameters.
struct KernelSpec {
  double lengthscale = 1.0;
  double variance = 1.0;

  void validate() const {
    require(lengthscale > 0.0 && variance > 0.0, ErrorKind::Config,
            "kernel parameters must be positive");
  }
};

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vec>& a,
                   const Eigen::Ref<const Vec>& b);

/// Matrix of squared Euclidean distances between row sets (na x nb).
Mat squared_distances(const Mat& a, const Mat& b);

/// Gram matrix of `spec` between two location sets.
Mat kernel_matrix(const KernelSpec& spec, const Mat& a, const Mat& b);

}  // namespace nica
