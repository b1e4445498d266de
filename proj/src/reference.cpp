#include "nica/reference.hpp"

#include <cmath>

namespace nica::reference {

DensePosterior dense_posterior(const BlockCovariance& cov,
                               const VariationalState& state) {
  const int n = cov.n_components;
  const int m = cov.n_locations;
  const long nj = cov.k_uu.rows();
  state.validate(n);

  DensePosterior out;
  out.marginals.means = Mat::Zero(m, n);
  out.marginals.covs.assign(static_cast<std::size_t>(m), Mat());

  if (nj == 0) {
    // No pseudo inputs: the posterior over s is the prior.
    for (int l = 0; l < m; ++l) {
      Mat block = cov.k_ss.block(static_cast<long>(l) * n,
                                 static_cast<long>(l) * n, n, n);
      out.marginals.covs[static_cast<std::size_t>(l)] =
          0.5 * (block + block.transpose());
    }
    return out;
  }

  Mat lambda = Mat::Zero(nj, nj);
  Vec m_nat(nj);
  for (int q = 0; q < state.n_pseudo(); ++q) {
    lambda.block(q * n, q * n, n, n) = state.factors[q].lambda();
    m_nat.segment(q * n, n) = state.factors[q].m_tilde;
  }

  Mat kuu_inv = cov.k_uu.inverse();
  Mat precision = kuu_inv + lambda;
  out.cov_u = precision.inverse();
  out.mean_u = out.cov_u * m_nat;

  const double log_det_kuu = std::log(cov.k_uu.determinant());
  const double log_det_precision = std::log(precision.determinant());
  out.log_normalizer = 0.5 * m_nat.dot(out.mean_u) -
                       0.5 * (log_det_kuu + log_det_precision);

  Mat proj = cov.k_su * kuu_inv;  // (m n) x (j n)
  Vec mu = proj * out.mean_u;
  Mat middle = proj * out.cov_u * proj.transpose();
  Mat explained = proj * cov.k_su.transpose();
  for (int l = 0; l < m; ++l) {
    out.marginals.means.row(l) =
        mu.segment(static_cast<long>(l) * n, n).transpose();
    Mat block = cov.k_ss.block(static_cast<long>(l) * n,
                               static_cast<long>(l) * n, n, n) -
                explained.block(static_cast<long>(l) * n,
                                static_cast<long>(l) * n, n, n) +
                middle.block(static_cast<long>(l) * n,
                             static_cast<long>(l) * n, n, n);
    out.marginals.covs[static_cast<std::size_t>(l)] =
        0.5 * (block + block.transpose());
  }

  out.kl_u = -0.5 * (lambda * out.cov_u).trace() -
             0.5 * out.mean_u.dot(lambda * out.mean_u) +
             out.mean_u.dot(m_nat) - out.log_normalizer;
  return out;
}

Mat kernel_matrix_serial(const Mat& a, const Mat& b, const KernelSpec& spec) {
  spec.validate();
  require(a.cols() == b.cols(), ErrorKind::Config,
          "kernel_matrix_serial: dimension mismatch");
  Mat out(a.rows(), b.rows());
  for (long r = 0; r < a.rows(); ++r) {
    for (long c = 0; c < b.rows(); ++c) {
      double d2 = 0.0;
      for (long k = 0; k < a.cols(); ++k) {
        const double diff = a(r, k) - b(c, k);
        d2 += diff * diff;
      }
      out(r, c) = spec.variance *
                  std::exp(-0.5 * d2 / (spec.lengthscale * spec.lengthscale));
    }
  }
  return out;
}

Mat mix_serial(const MixingNetwork& net, const Mat& s) {
  net.validate();
  require(s.rows() == net.in_dim(), ErrorKind::Config,
          "mix_serial: component dimension mismatch");
  Mat h = s;
  for (int k = 0; k < net.layers(); ++k) {
    const Mat& w = net.weights[k];
    const Vec& b = net.biases[k];
    Mat z(w.rows(), h.cols());
    for (long r = 0; r < w.rows(); ++r) {
      for (long c = 0; c < h.cols(); ++c) {
        double acc = b[r];
        for (long i = 0; i < w.cols(); ++i) acc += w(r, i) * h(i, c);
        z(r, c) = (k + 1 < net.layers()) ? leaky_tanh(acc, net.leak) : acc;
      }
    }
    h = std::move(z);
  }
  return h;
}

}  // namespace nica::reference
