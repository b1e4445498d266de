#include "nica/processes.hpp"

#include <cmath>
#include <limits>

#include "nica/rng.hpp"
#include "nica/special.hpp"

namespace nica {

double mvt_logpdf(const Vec& x, const Vec& mean, const Mat& sigma, double nu) {
  const long d = x.size();
  require(mean.size() == d && sigma.rows() == d && sigma.cols() == d,
          ErrorKind::Config, "mvt_logpdf: dimension mismatch");
  require(nu > 0.0, ErrorKind::Config, "mvt_logpdf: nu must be positive");

  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw_numerical("mvt_logpdf: scale matrix is not positive definite");
  }
  Vec r = x - mean;
  double log_det = 0.0;
  for (long i = 0; i < d; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  double delta = r.dot(llt.solve(r));

  if (std::isinf(nu)) {
    return -0.5 * (d * std::log(2.0 * M_PI) + log_det + delta);
  }
  double half_sum = 0.5 * (nu + static_cast<double>(d));
  return std::lgamma(half_sum) - std::lgamma(0.5 * nu) -
         0.5 * d * (std::log(nu) + std::log(M_PI)) - 0.5 * log_det -
         half_sum * std::log1p(delta / nu);
}

double sample_gamma(const GammaParams& params, double u) {
  params.validate();
  return gamma_quantile(params.shape, params.rate, u).value;
}

ComponentSampler::ComponentSampler(const Lattice& lattice,
                                   const std::vector<TpPrior>& priors)
    : priors_(priors), m_(lattice.count()) {
  require(!priors.empty(), ErrorKind::Config, "component sampler: no priors");
  std::vector<KernelSpec> kernels;
  for (const auto& p : priors) {
    require(p.nu > 0.0, ErrorKind::Config, "component sampler: nu must be positive");
    kernels.push_back(p.kernel);
  }
  double jitter = covariance_jitter(kernels);
  chol_.reserve(priors.size());
  for (const auto& p : priors) {
    Mat gram = kernel_matrix(p.kernel, lattice.locations, lattice.locations);
    gram.diagonal().array() += jitter;
    Eigen::LLT<Mat> llt(gram);
    if (llt.info() != Eigen::Success) {
      throw_numerical("component sampler: kernel Gram matrix is not positive definite");
    }
    chol_.push_back(llt.matrixL());
  }
}

ComponentDraw ComponentSampler::draw(std::uint64_t seed,
                                     std::uint64_t sample_index) const {
  const int n = n_components();
  ComponentDraw out;
  out.components.resize(n, m_);
  out.taus = Vec::Ones(n);
  for (int i = 0; i < n; ++i) {
    double tau = 1.0;
    if (!std::isinf(priors_[i].nu)) {
      Rng tau_stream = make_stream(seed, StreamTag::TauDraw, sample_index, i);
      GammaParams mixing{0.5 * priors_[i].nu, 0.5 * priors_[i].nu};
      tau = sample_gamma(mixing, tau_stream.uniform());
    }
    out.taus[i] = tau;

    Rng field_stream = make_stream(seed, StreamTag::LatentField, sample_index, i);
    Vec eps(m_);
    for (int l = 0; l < m_; ++l) eps[l] = field_stream.normal();
    out.components.row(i) =
        (chol_[i].triangularView<Eigen::Lower>() * eps / std::sqrt(tau))
            .transpose();
  }
  return out;
}

ComponentDraw sample_tp_components(const Lattice& lattice,
                                   const std::vector<TpPrior>& priors,
                                   std::uint64_t seed) {
  return ComponentSampler(lattice, priors).draw(seed, 0);
}

double gamma_kl(const GammaParams& q, const GammaParams& p) {
  q.validate();
  p.validate();
  // Natural parameters eta = (shape - 1, -rate), log-normalizer
  // A = lgamma(shape) - shape*log(rate), mean parameters grad A.
  double eta_q0 = q.shape - 1.0, eta_q1 = -q.rate;
  double eta_p0 = p.shape - 1.0, eta_p1 = -p.rate;
  double a_q = std::lgamma(q.shape) - q.shape * std::log(q.rate);
  double a_p = std::lgamma(p.shape) - p.shape * std::log(p.rate);
  double grad0 = digamma(q.shape) - std::log(q.rate);  // E[log tau]
  double grad1 = q.shape / q.rate;                     // E[tau]
  return a_p - a_q - (eta_p0 - eta_q0) * grad0 - (eta_p1 - eta_q1) * grad1;
}

}  // namespace nica
