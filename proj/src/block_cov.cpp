#include "nica/block_cov.hpp"

#include <algorithm>
#include <cmath>

namespace nica {

double covariance_jitter(const std::vector<KernelSpec>& kernels) {
  double vmax = 0.0;
  for (const auto& k : kernels) vmax = std::max(vmax, k.variance);
  return 1e-6 * vmax;
}

namespace {

// Scatters a per-component Gram matrix into the interleaved layout with
// stride N.
void scatter(const Mat& src, int comp, int n_components, Mat* dst) {
  for (long r = 0; r < src.rows(); ++r) {
    for (long c = 0; c < src.cols(); ++c) {
      (*dst)(r * n_components + comp, c * n_components + comp) = src(r, c);
    }
  }
}

}  // namespace

BlockCovariance assemble_covariance(const Lattice& lattice, const Mat& pseudo,
                                    const std::vector<KernelSpec>& kernels) {
  const int n = static_cast<int>(kernels.size());
  require(n > 0, ErrorKind::Config, "assemble_covariance: no components");
  require(lattice.count() > 0, ErrorKind::Config,
          "assemble_covariance: empty lattice");
  require(pseudo.rows() == 0 || pseudo.cols() == lattice.dim(),
          ErrorKind::Config, "assemble_covariance: pseudo-location dimension mismatch");
  for (const auto& k : kernels) k.validate();

  const int m = lattice.count();
  const int j = static_cast<int>(pseudo.rows());

  BlockCovariance cov;
  cov.n_components = n;
  cov.n_locations = m;
  cov.n_pseudo = j;
  cov.jitter = covariance_jitter(kernels);
  cov.k_ss = Mat::Zero(static_cast<long>(m) * n, static_cast<long>(m) * n);
  cov.k_su = Mat::Zero(static_cast<long>(m) * n, static_cast<long>(j) * n);
  cov.k_uu = Mat::Zero(static_cast<long>(j) * n, static_cast<long>(j) * n);

  for (int i = 0; i < n; ++i) {
    Mat g_ss = kernel_matrix(kernels[i], lattice.locations, lattice.locations);
    scatter(g_ss, i, n, &cov.k_ss);
    if (j > 0) {
      Mat g_su = kernel_matrix(kernels[i], lattice.locations, pseudo);
      Mat g_uu = kernel_matrix(kernels[i], pseudo, pseudo);
      for (long r = 0; r < g_su.rows(); ++r) {
        for (long c = 0; c < g_su.cols(); ++c) {
          cov.k_su(r * n + i, c * n + i) = g_su(r, c);
        }
      }
      scatter(g_uu, i, n, &cov.k_uu);
    }
  }
  cov.k_ss.diagonal().array() += cov.jitter;
  cov.k_uu.diagonal().array() += cov.jitter;
  return cov;
}

BlockCovariance scale_by_tau(const BlockCovariance& cov, const Vec& taus) {
  require(taus.size() == cov.n_components, ErrorKind::Config,
          "scale_by_tau: need one scale per component");
  for (long i = 0; i < taus.size(); ++i) {
    require(taus[i] > 0.0, ErrorKind::Numerical,
            "scale_by_tau: scales must be positive");
  }
  BlockCovariance out = cov;
  const int n = cov.n_components;
  auto scale_rows = [&](Mat& mat) {
    for (long r = 0; r < mat.rows(); ++r) {
      mat.row(r) /= taus[r % n];
    }
  };
  scale_rows(out.k_ss);
  scale_rows(out.k_su);
  scale_rows(out.k_uu);
  return out;
}

std::vector<int> component_major_permutation(int groups, int n_components) {
  std::vector<int> perm(static_cast<std::size_t>(groups) * n_components);
  for (int i = 0; i < n_components; ++i) {
    for (int g = 0; g < groups; ++g) {
      perm[static_cast<std::size_t>(i) * groups + g] = g * n_components + i;
    }
  }
  return perm;
}

Mat permute_matrix(const Mat& a, const std::vector<int>& row_perm,
                   const std::vector<int>& col_perm) {
  Mat out(a.rows(), a.cols());
  for (long r = 0; r < a.rows(); ++r) {
    long sr = row_perm.empty() ? r : row_perm[r];
    for (long c = 0; c < a.cols(); ++c) {
      long sc = col_perm.empty() ? c : col_perm[c];
      out(r, c) = a(sr, sc);
    }
  }
  return out;
}

}  // namespace nica
