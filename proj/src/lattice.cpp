#include "nica/lattice.hpp"

#include <cmath>

namespace nica {

Lattice make_grid(const std::vector<int>& shape, double spacing) {
  require(!shape.empty(), ErrorKind::Config, "grid shape must be non-empty");
  long m = 1;
  for (int n : shape) {
    require(n > 0, ErrorKind::Config, "grid extents must be positive");
    m *= n;
  }
  require(spacing > 0.0, ErrorKind::Config, "grid spacing must be positive");

  const int d = static_cast<int>(shape.size());
  Lattice lat;
  lat.locations.resize(m, d);
  std::vector<int> idx(d, 0);
  for (long r = 0; r < m; ++r) {
    for (int k = 0; k < d; ++k) {
      lat.locations(r, k) = spacing * idx[k];
    }
    for (int k = d - 1; k >= 0; --k) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return lat;
}

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vec>& a,
                   const Eigen::Ref<const Vec>& b) {
  spec.validate();
  require(a.size() == b.size(), ErrorKind::Config,
          "kernel_eval: dimension mismatch");
  double d2 = (a - b).squaredNorm();
  return spec.variance *
         std::exp(-0.5 * d2 / (spec.lengthscale * spec.lengthscale));
}

Mat squared_distances(const Mat& a, const Mat& b) {
  require(a.cols() == b.cols(), ErrorKind::Config,
          "squared_distances: dimension mismatch");
  const long na = a.rows(), nb = b.rows();
  Mat out(na, nb);
#pragma omp parallel for schedule(static) if (na * nb > 4096)
  for (long i = 0; i < na; ++i) {
    for (long j = 0; j < nb; ++j) {
      out(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return out;
}

Mat kernel_matrix(const KernelSpec& spec, const Mat& a, const Mat& b) {
  spec.validate();
  Mat d2 = squared_distances(a, b);
  double inv = -0.5 / (spec.lengthscale * spec.lengthscale);
  return spec.variance * (inv * d2.array()).exp().matrix();
}

}  // namespace nica
