#include "nica/evaluation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "nica/block_cov.hpp"
#include "nica/rng.hpp"

namespace nica {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Average ranks with ties sharing their mean rank.
Vec rank_transform(const Vec& x) {
  const long n = x.size();
  std::vector<long> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](long a, long b) { return x[a] < x[b]; });
  Vec ranks(n);
  long i = 0;
  while (i < n) {
    long j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double mean_rank = 0.5 * (i + j) + 1.0;
    for (long k = i; k <= j; ++k) ranks[idx[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

/// Absolute Pearson correlations between the rows of two equally sized
/// series matrices.  Throws when a row has zero variance.
Mat abs_correlations(const Mat& a, const Mat& b, const char* a_name,
                     const char* b_name) {
  const long n = a.rows();
  Mat ac = a.colwise() - a.rowwise().mean();
  Mat bc = b.colwise() - b.rowwise().mean();
  Vec an = ac.rowwise().norm();
  Vec bn = bc.rowwise().norm();
  for (long i = 0; i < n; ++i) {
    if (an[i] <= 0.0 || bn[i] <= 0.0) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "mcc: %s component %ld has zero variance",
                    an[i] <= 0.0 ? a_name : b_name, i);
      throw_numerical(buf);
    }
  }
  Mat c = (ac * bc.transpose()).cwiseAbs();
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) c(i, j) /= an[i] * bn[j];
  return c;
}

double matched_mean(const Mat& corr, const std::vector<int>& matching) {
  double total = 0;
  for (std::size_t i = 0; i < matching.size(); ++i) total += corr(i, matching[i]);
  return total / static_cast<double>(matching.size());
}

/// Pools per-sample series into rows of one long matrix, optionally
/// rank-transforming (pooled variant ranks the concatenated series; the
/// per-sample variant ranks within each sample before pooling is not needed
/// because callers pass single samples).
Mat pool_series(const std::vector<Mat>& parts, bool spearman) {
  const long n = parts.front().rows();
  const long m = parts.front().cols();
  Mat out(n, m * static_cast<long>(parts.size()));
  for (std::size_t s = 0; s < parts.size(); ++s)
    out.middleCols(static_cast<long>(s) * m, m) = parts[s];
  if (spearman) {
    for (long i = 0; i < n; ++i) {
      Vec row = out.row(i).transpose();
      out.row(i) = rank_transform(row).transpose();
    }
  }
  return out;
}

}  // namespace

std::vector<int> best_assignment(const Mat& scores) {
  const long n = scores.rows();
  require(n >= 1 && scores.cols() == n, ErrorKind::Config,
          "assignment: square score matrix required");
  // Potential-based shortest augmenting paths on the negated scores.
  Mat cost = -scores;
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (long i = 1; i <= n; ++i) {
    p[0] = static_cast<int>(i);
    long j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const long i0 = p[j0];
      double delta = kInf;
      long j1 = -1;
      for (long j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = static_cast<int>(j0);
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (long j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const long j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (long j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

std::vector<int> best_assignment_bruteforce(const Mat& scores) {
  const long n = scores.rows();
  require(n >= 1 && n <= 9 && scores.cols() == n, ErrorKind::Config,
          "assignment: brute force limited to small problems");
  std::vector<int> perm(n), best(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best_total = -kInf;
  do {
    double total = 0;
    for (long i = 0; i < n; ++i) total += scores(i, perm[i]);
    if (total > best_total) {
      best_total = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

MccReport mean_corr_coeff(const std::vector<Mat>& estimated,
                          const std::vector<Mat>& truth, const MccOptions& opts) {
  require(!estimated.empty() && estimated.size() == truth.size(), ErrorKind::Config,
          "mcc: matching non-empty sample lists required");
  const long n = estimated.front().rows();
  const long m = estimated.front().cols();
  for (std::size_t s = 0; s < estimated.size(); ++s) {
    require(estimated[s].rows() == n && estimated[s].cols() == m &&
                truth[s].rows() == n && truth[s].cols() == m,
            ErrorKind::Config, "mcc: all samples must share one shape");
  }

  MccReport report;
  Mat pooled_est = pool_series(estimated, opts.spearman);
  Mat pooled_truth = pool_series(truth, opts.spearman);
  report.abs_correlations =
      abs_correlations(pooled_est, pooled_truth, "estimated", "true");
  report.matching = best_assignment(report.abs_correlations);

  if (!opts.per_sample) {
    report.mcc = matched_mean(report.abs_correlations, report.matching);
    return report;
  }
  double total = 0;
  for (std::size_t s = 0; s < estimated.size(); ++s) {
    Mat ce = pool_series({estimated[s]}, opts.spearman);
    Mat ct = pool_series({truth[s]}, opts.spearman);
    Mat corr = abs_correlations(ce, ct, "estimated", "true");
    total += matched_mean(corr, best_assignment(corr));
  }
  report.mcc = total / static_cast<double>(estimated.size());
  return report;
}

IcaResult linear_ica(const std::vector<Mat>& observations, int n_components,
                     std::uint64_t seed, const IcaOptions& opts) {
  require(!observations.empty(), ErrorKind::Config, "ica: no samples");
  const long m_obs = observations.front().rows();
  const long m = observations.front().cols();
  require(n_components >= 1 && n_components <= m_obs, ErrorKind::Config,
          "ica: component count must not exceed the observed channels");
  const long cols_total = m * static_cast<long>(observations.size());

  Mat x(m_obs, cols_total);
  for (std::size_t s = 0; s < observations.size(); ++s) {
    require(observations[s].rows() == m_obs && observations[s].cols() == m,
            ErrorKind::Config, "ica: all samples must share one shape");
    x.middleCols(static_cast<long>(s) * m, m) = observations[s];
  }
  x.colwise() -= x.rowwise().mean().eval();

  // PCA whitening to n components.
  Mat cov = x * x.transpose() / static_cast<double>(cols_total - 1);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  require(eig.info() == Eigen::Success, ErrorKind::Numerical,
          "ica: eigendecomposition failed");
  const long n = n_components;
  Mat white(n, m_obs);
  for (long k = 0; k < n; ++k) {
    const long src = m_obs - 1 - k;  // eigenvalues ascend
    const double lam = eig.eigenvalues()[src];
    require(lam > 1e-12 * eig.eigenvalues().maxCoeff(), ErrorKind::Numerical,
            "ica: observation covariance is rank deficient");
    white.row(k) = eig.eigenvectors().col(src).transpose() / std::sqrt(lam);
  }
  Mat z = white * x;  // n x cols_total, identity covariance

  // Symmetric decorrelation helper: W <- (W W')^{-1/2} W.
  auto decorrelate = [](const Mat& w) {
    Eigen::SelfAdjointEigenSolver<Mat> e(w * w.transpose());
    Mat inv_sqrt = e.eigenvectors() *
                   e.eigenvalues().cwiseMax(1e-18).cwiseSqrt().cwiseInverse().asDiagonal() *
                   e.eigenvectors().transpose();
    return (inv_sqrt * w).eval();
  };

  Rng rng = make_stream(seed, StreamTag::IcaInit);
  Mat w(n, n);
  for (long r = 0; r < n; ++r)
    for (long c = 0; c < n; ++c) w(r, c) = rng.normal();
  w = decorrelate(w);

  IcaResult result;
  result.converged = false;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    Mat y = w * z;
    Mat g = y.array().tanh().matrix();
    Vec gprime_mean =
        (1.0 - g.array().square()).matrix().rowwise().mean().transpose();
    Mat w_new = (g * z.transpose()) / static_cast<double>(cols_total) -
                gprime_mean.asDiagonal() * w;
    w_new = decorrelate(w_new);
    double delta = 0;
    for (long r = 0; r < n; ++r)
      delta = std::max(delta, std::abs(1.0 - std::abs(w_new.row(r).dot(w.row(r)))));
    w = w_new;
    result.iterations = iter;
    if (delta < opts.tol) {
      result.converged = true;
      break;
    }
  }

  Mat s_pooled = w * z;
  for (std::size_t s = 0; s < observations.size(); ++s)
    result.components.push_back(s_pooled.middleCols(static_cast<long>(s) * m, m));
  return result;
}

std::vector<Mat> extract_components(const TpNicaModel& model,
                                    const std::vector<VariationalState>& states,
                                    const Lattice& lattice) {
  model.validate();
  require(!states.empty(), ErrorKind::Config, "extract: no states");
  const int n = model.n_components();
  std::vector<Mat> out(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) {
    const VariationalState& state = states[s];
    state.validate(n);
    BlockCovariance cov =
        assemble_covariance(lattice, state.pseudo_locations, model.kernels);
    Vec taus = Vec::Ones(n);
    if (!model.gp_limit()) {
      require(static_cast<int>(state.tau_posteriors.size()) == n, ErrorKind::Config,
              "extract: scale posteriors required for finite degrees of freedom");
      for (int i = 0; i < n; ++i)
        taus[i] = state.tau_posteriors[i].shape / state.tau_posteriors[i].rate;
    }
    BlockCovariance scaled = scale_by_tau(cov, taus);
    ConditionalPosterior cond = build_conditional(scaled, state);
    MarginalBlocks marg = marginal_qs(scaled, cond);
    out[s] = marg.means.transpose();
  }
  return out;
}

}  // namespace nica
