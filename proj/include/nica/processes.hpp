#pragma once

#include <vector>

#include "nica/block_cov.hpp"
#include "nica/lattice.hpp"

namespace nica {

struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;

  void validate() const {
    require(shape > 0.0 && rate > 0.0, ErrorKind::Config,
            "gamma parameters must be positive");
  }
};

/// Log density of the multivariate Student-t (or the Gaussian when nu is
/// infinite).  `sigma` is the scale matrix.
double mvt_logpdf(const Vec& x, const Vec& mean, const Mat& sigma, double nu);

/// Inverse-CDF draw from Gamma(shape, rate) at base uniform u.
double sample_gamma(const GammaParams& params, double u);

/// Prior over one latent component field: a Student-t process with the given
/// tail parameter (infinite = Gaussian process limit) and kernel, zero mean.
struct TpPrior {
  double nu = 4.0;
  KernelSpec kernel;
};

struct ComponentDraw {
  Mat components;  // N x m
  Vec taus;        // N mixing scales (all ones in the GP limit)
};

/// Caches per-component Cholesky factors so that repeated draws over the same
/// lattice only pay for the factorization once; scale mixing is applied to
/// the factor afterwards.
class ComponentSampler {
 public:
  ComponentSampler(const Lattice& lattice, const std::vector<TpPrior>& priors);

  /// Draw for one sample index; randomness is fully determined by
  /// (seed, sample_index), and the Gaussian base draws do not depend on nu.
  ComponentDraw draw(std::uint64_t seed, std::uint64_t sample_index) const;

  int n_components() const { return static_cast<int>(priors_.size()); }
  int n_locations() const { return m_; }

 private:
  std::vector<TpPrior> priors_;
  std::vector<Mat> chol_;  // lower factors of the jittered Gram matrices
  int m_ = 0;
};

ComponentDraw sample_tp_components(const Lattice& lattice,
                                   const std::vector<TpPrior>& priors,
                                   std::uint64_t seed);

/// KL(Gamma(q) || Gamma(p)) computed through the exponential-family natural
/// parameters and log-normalizer.
double gamma_kl(const GammaParams& q, const GammaParams& p);

}  // namespace nica
