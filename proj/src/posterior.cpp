#include "nica/posterior.hpp"

#include <cmath>
#include <cstdio>

namespace nica {

void PseudoFactor::validate() const {
  const long n = w_tilde.rows();
  require(w_tilde.cols() == n && m_tilde.size() == n, ErrorKind::Config,
          "pseudo factor: shape mismatch");
  for (long r = 0; r < n; ++r) {
    require(w_tilde(r, r) > 0.0, ErrorKind::Config,
            "pseudo factor: diagonal must be positive");
    for (long c = r + 1; c < n; ++c) {
      require(w_tilde(r, c) == 0.0, ErrorKind::Config,
              "pseudo factor: must be lower-triangular");
    }
  }
}

void VariationalState::validate(int n_components) const {
  require(!factors.empty(), ErrorKind::Config, "variational state: no factors");
  require(pseudo_locations.rows() == n_pseudo(), ErrorKind::Config,
          "variational state: one factor per pseudo location required");
  for (const auto& f : factors) {
    f.validate();
    require(f.w_tilde.rows() == n_components, ErrorKind::Config,
            "variational state: factor dimension mismatch");
    if (factorized) {
      for (long r = 0; r < f.w_tilde.rows(); ++r) {
        for (long c = 0; c < r; ++c) {
          require(f.w_tilde(r, c) == 0.0, ErrorKind::Config,
                  "variational state: factorized mode requires diagonal factors");
        }
      }
    }
  }
  // Scale posteriors are per-family: present for finite degrees of freedom,
  // absent in the Gaussian-process limit.  Either way the count must be
  // consistent; the objective enforces the family-specific presence rule.
  require(tau_posteriors.empty() ||
              static_cast<int>(tau_posteriors.size()) == n_components,
          ErrorKind::Config,
          "variational state: scale posteriors must be absent or one per component");
  for (const auto& g : tau_posteriors) g.validate();
}

namespace {

Mat chol_lower(const Mat& a, const char* what) {
  if (a.rows() == 0) return a;
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "%s: Cholesky failed (size %ld, min diagonal %.3e)", what,
                  a.rows(), a.diagonal().minCoeff());
    throw_numerical(buf);
  }
  return llt.matrixL();
}

Mat build_lambda(const VariationalState& state, int n) {
  const int j = state.n_pseudo();
  Mat lambda = Mat::Zero(static_cast<long>(j) * n, static_cast<long>(j) * n);
  for (int q = 0; q < j; ++q) {
    lambda.block(q * n, q * n, n, n) = state.factors[q].lambda();
  }
  return lambda;
}

Vec stack_m(const VariationalState& state, int n) {
  const int j = state.n_pseudo();
  Vec m(static_cast<long>(j) * n);
  for (int q = 0; q < j; ++q) m.segment(q * n, n) = state.factors[q].m_tilde;
  return m;
}

ConditionalPosterior build_joint(const BlockCovariance& cov,
                                 const VariationalState& state) {
  const int n = cov.n_components;
  const long nj = cov.k_uu.rows();
  ConditionalPosterior cond;
  cond.m_stacked = stack_m(state, n);
  cond.chol_kuu = chol_lower(cov.k_uu, "build_conditional: K_uu");
  if (nj == 0) {
    cond.chol_b = Mat();
    cond.h = Vec();
    cond.log_normalizer = 0.0;
    return cond;
  }
  Mat lambda = build_lambda(state, n);
  Mat b = Mat::Identity(nj, nj) +
          cond.chol_kuu.transpose() * lambda * cond.chol_kuu;
  cond.chol_b = chol_lower(b, "build_conditional: site-adjusted Gram");
  Vec a = cond.chol_kuu.transpose() * cond.m_stacked;
  Vec w = cond.chol_b.triangularView<Eigen::Lower>().solve(a);
  double log_det_b = 0.0;
  for (long i = 0; i < nj; ++i) log_det_b += std::log(cond.chol_b(i, i));
  cond.log_normalizer = 0.5 * w.squaredNorm() - log_det_b;
  Vec g = cond.chol_b.transpose().triangularView<Eigen::Upper>().solve(w);
  cond.h = cond.chol_kuu.triangularView<Eigen::Lower>() * g;
  return cond;
}

MarginalBlocks marginal_joint(const BlockCovariance& cov,
                              const ConditionalPosterior& cond) {
  const int n = cov.n_components;
  const int m = cov.n_locations;
  const long nj = cov.k_uu.rows();

  MarginalBlocks out;
  out.means = Mat::Zero(m, n);
  out.covs.assign(m, Mat());

  Mat t0, v;
  Vec g;
  if (nj > 0) {
    t0 = cond.chol_kuu.triangularView<Eigen::Lower>().solve(
        Mat(cov.k_su.transpose()));
    v = cond.chol_b.triangularView<Eigen::Lower>().solve(t0);
    g = cond.chol_kuu.triangularView<Eigen::Lower>().solve(cond.h);
    Vec mu = t0.transpose() * g;
    for (int l = 0; l < m; ++l) {
      out.means.row(l) = mu.segment(static_cast<long>(l) * n, n).transpose();
    }
  }

#pragma omp parallel for schedule(static)
  for (int l = 0; l < m; ++l) {
    Mat block = cov.k_ss.block(static_cast<long>(l) * n,
                               static_cast<long>(l) * n, n, n);
    if (nj > 0) {
      auto tl = t0.middleCols(static_cast<long>(l) * n, n);
      auto vl = v.middleCols(static_cast<long>(l) * n, n);
      block -= tl.transpose() * tl;
      block += vl.transpose() * vl;
    }
    out.covs[l] = 0.5 * (block + block.transpose());
  }
  return out;
}

double kl_joint(const BlockCovariance& cov, const VariationalState& state,
                const ConditionalPosterior& cond) {
  const int n = cov.n_components;
  const long nj = cov.k_uu.rows();
  if (nj == 0) return 0.0;
  Mat lambda = build_lambda(state, n);
  // S = W'W with W = C^{-1} L'; Tr(Lambda S) contracts without forming S.
  Mat w = cond.chol_b.triangularView<Eigen::Lower>().solve(
      Mat(cond.chol_kuu.transpose()));
  double trace_term = (w * lambda).cwiseProduct(w).sum();
  double quad = cond.h.dot(lambda * cond.h);
  double lin = cond.h.dot(cond.m_stacked);
  return (-0.5 * trace_term - 0.5 * quad + lin) - cond.log_normalizer;
}

}  // namespace

BlockCovariance extract_component(const BlockCovariance& cov, int comp) {
  const int n = cov.n_components;
  require(comp >= 0 && comp < n, ErrorKind::Config,
          "extract_component: index out of range");
  BlockCovariance out;
  out.n_components = 1;
  out.n_locations = cov.n_locations;
  out.n_pseudo = cov.n_pseudo;
  out.jitter = cov.jitter;
  const int m = cov.n_locations, j = cov.n_pseudo;
  out.k_ss.resize(m, m);
  out.k_su.resize(m, j);
  out.k_uu.resize(j, j);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      out.k_ss(r, c) = cov.k_ss(static_cast<long>(r) * n + comp,
                                static_cast<long>(c) * n + comp);
    }
    for (int c = 0; c < j; ++c) {
      out.k_su(r, c) = cov.k_su(static_cast<long>(r) * n + comp,
                                static_cast<long>(c) * n + comp);
    }
  }
  for (int r = 0; r < j; ++r) {
    for (int c = 0; c < j; ++c) {
      out.k_uu(r, c) = cov.k_uu(static_cast<long>(r) * n + comp,
                                static_cast<long>(c) * n + comp);
    }
  }
  return out;
}

VariationalState extract_component(const VariationalState& state, int comp) {
  VariationalState out;
  out.pseudo_locations = state.pseudo_locations;
  out.factorized = false;
  for (const auto& f : state.factors) {
    PseudoFactor pf;
    pf.w_tilde = Mat::Constant(1, 1, f.w_tilde(comp, comp));
    pf.m_tilde = Vec::Constant(1, f.m_tilde(comp));
    out.factors.push_back(std::move(pf));
  }
  if (!state.tau_posteriors.empty()) {
    out.tau_posteriors.push_back(
        state.tau_posteriors[static_cast<std::size_t>(comp)]);
  } else {
    out.tau_posteriors.push_back(GammaParams{});
  }
  return out;
}

ConditionalPosterior build_conditional(const BlockCovariance& cov,
                                       const VariationalState& state) {
  state.validate(cov.n_components);
  require(state.n_pseudo() == cov.n_pseudo, ErrorKind::Config,
          "build_conditional: pseudo-location count mismatch");
  if (!state.factorized || cov.n_components == 1) {
    return build_joint(cov, state);
  }
  ConditionalPosterior cond;
  cond.log_normalizer = 0.0;
  for (int i = 0; i < cov.n_components; ++i) {
    cond.per_component.push_back(
        build_joint(extract_component(cov, i), extract_component(state, i)));
    cond.log_normalizer += cond.per_component.back().log_normalizer;
  }
  return cond;
}

MarginalBlocks marginal_qs(const BlockCovariance& cov,
                           const ConditionalPosterior& cond) {
  if (!cond.factorized()) {
    return marginal_joint(cov, cond);
  }
  const int n = cov.n_components;
  const int m = cov.n_locations;
  MarginalBlocks out;
  out.means = Mat::Zero(m, n);
  out.covs.assign(m, Mat::Zero(n, n));
  for (int i = 0; i < n; ++i) {
    MarginalBlocks part =
        marginal_joint(extract_component(cov, i), cond.per_component[i]);
    for (int l = 0; l < m; ++l) {
      out.means(l, i) = part.means(l, 0);
      out.covs[l](i, i) = part.covs[l](0, 0);
    }
  }
  return out;
}

double kl_u(const BlockCovariance& cov, const VariationalState& state,
            const ConditionalPosterior& cond) {
  if (!cond.factorized()) {
    return kl_joint(cov, state, cond);
  }
  double total = 0.0;
  for (int i = 0; i < cov.n_components; ++i) {
    total += kl_joint(extract_component(cov, i), extract_component(state, i),
                      cond.per_component[i]);
  }
  return total;
}

Mat ConditionalPosterior::precision() const {
  require(!factorized(), ErrorKind::Config,
          "precision(): only available for joint conditionals");
  const long nj = chol_kuu.rows();
  if (nj == 0) return Mat();
  // K^{-1} + Lambda = L^{-T} B L^{-1}, assembled with triangular solves.
  Mat right = chol_kuu.triangularView<Eigen::Lower>()
                  .solve(Mat::Identity(nj, nj));  // L^{-1}
  Mat b = chol_b * chol_b.transpose();
  return right.transpose() * b * right;
}

Mat ConditionalPosterior::posterior_cov() const {
  require(!factorized(), ErrorKind::Config,
          "posterior_cov(): only available for joint conditionals");
  const long nj = chol_kuu.rows();
  if (nj == 0) return Mat();
  Mat w = chol_b.triangularView<Eigen::Lower>().solve(
      Mat(chol_kuu.transpose()));
  return w.transpose() * w;
}

}  // namespace nica
