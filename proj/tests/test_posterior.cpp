#include <doctest.h>

#include <initializer_list>

#include <cmath>
#include <vector>

#include "nica/posterior.hpp"
#include "nica/reference.hpp"
#include "nica/rng.hpp"

using namespace nica;

namespace {

// Random but well-posed problem: covariance assembled from real kernels so it
// is guaranteed positive definite, sites drawn with positive diagonals.
struct Instance {
  BlockCovariance cov;
  VariationalState state;
};

Instance random_instance(int n, int j, std::uint64_t seed, bool factorized) {
  Lattice g = make_grid({3, 2});
  Rng rng = make_stream(seed, StreamTag::Misc, n, j);
  Mat pseudo(j, 2);
  for (long r = 0; r < pseudo.rows(); ++r) {
    for (long c = 0; c < pseudo.cols(); ++c) pseudo(r, c) = 2.0 * rng.uniform();
  }
  std::vector<KernelSpec> kernels;
  for (int i = 0; i < n; ++i) {
    kernels.push_back({0.8 + 0.4 * i, 0.7 + 0.3 * i});
  }
  Instance inst;
  inst.cov = assemble_covariance(g, pseudo, kernels);
  inst.state.factorized = factorized;
  inst.state.pseudo_locations = pseudo;
  for (int q = 0; q < j; ++q) {
    PseudoFactor f;
    f.w_tilde = Mat::Zero(n, n);
    for (int r = 0; r < n; ++r) {
      f.w_tilde(r, r) = 0.4 + rng.uniform();
      if (!factorized) {
        for (int c = 0; c < r; ++c) f.w_tilde(r, c) = 0.5 * rng.normal();
      }
    }
    f.m_tilde = Vec(n);
    for (int r = 0; r < n; ++r) f.m_tilde[r] = rng.normal();
    inst.state.factors.push_back(std::move(f));
  }
  for (int i = 0; i < n; ++i) inst.state.tau_posteriors.push_back({2.0, 2.0});
  return inst;
}

}  // namespace

TEST_CASE("scalar site instance reproduces the hand-worked divergence") {
  // One component, one pseudo value: k = 2, site factor w = 0.7, linear
  // term c = 0.9.  Worked by hand twice (site form and moment form).
  BlockCovariance cov;
  cov.n_components = 1;
  cov.n_locations = 1;
  cov.n_pseudo = 1;
  cov.k_ss = Mat::Constant(1, 1, 1.5);
  cov.k_su = Mat::Constant(1, 1, 0.6);
  cov.k_uu = Mat::Constant(1, 1, 2.0);

  VariationalState state;
  state.pseudo_locations = Mat::Zero(1, 2);
  PseudoFactor f;
  f.w_tilde = Mat::Constant(1, 1, 0.7);
  f.m_tilde = Vec::Constant(1, 0.9);
  state.factors.push_back(f);
  state.tau_posteriors.push_back({2.0, 2.0});

  ConditionalPosterior cond = build_conditional(cov, state);
  const double k = 2.0, w2 = 0.49, c = 0.9;
  const double s_post = k / (1.0 + w2 * k);
  const double h = c * s_post;
  CHECK(cond.h[0] == doctest::Approx(h).epsilon(1e-12));
  CHECK(cond.log_normalizer ==
        doctest::Approx(0.5 * c * c * s_post - 0.5 * std::log(1.0 + w2 * k))
            .epsilon(1e-12));

  double kl = kl_u(cov, state, cond);
  CHECK(kl == doctest::Approx(0.3006853).epsilon(1e-6));
  // Moment form of the same divergence.
  double moment = 0.5 * (s_post / k + h * h / k - 1.0 + std::log(k) -
                         std::log(s_post));
  CHECK(kl == doctest::Approx(moment).epsilon(1e-12));
}

TEST_CASE("factored conditional matches dense inversion") {
  for (int n : {1, 3}) {
    for (int j : {1, 4}) {
      Instance inst = random_instance(n, j, 7 + n + j, false);
      ConditionalPosterior cond = build_conditional(inst.cov, inst.state);
      reference::DensePosterior dense =
          reference::dense_posterior(inst.cov, inst.state);

      CHECK(cond.log_normalizer ==
            doctest::Approx(dense.log_normalizer).epsilon(1e-9));
      CHECK((cond.h - dense.mean_u).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((cond.posterior_cov() - dense.cov_u).cwiseAbs().maxCoeff() < 1e-9);

      // Precision and covariance are mutual inverses.
      Mat eye = cond.precision() * cond.posterior_cov();
      CHECK((eye - Mat::Identity(eye.rows(), eye.cols())).cwiseAbs().maxCoeff() <
            1e-8);

      MarginalBlocks mb = marginal_qs(inst.cov, cond);
      CHECK((mb.means - dense.marginals.means).cwiseAbs().maxCoeff() < 1e-9);
      for (std::size_t l = 0; l < mb.covs.size(); ++l) {
        CHECK((mb.covs[l] - dense.marginals.covs[l]).cwiseAbs().maxCoeff() < 1e-9);
      }
      CHECK(kl_u(inst.cov, inst.state, cond) ==
            doctest::Approx(dense.kl_u).epsilon(1e-9));
    }
  }
}

TEST_CASE("divergence equals the dense moment form") {
  Instance inst = random_instance(2, 3, 41, false);
  ConditionalPosterior cond = build_conditional(inst.cov, inst.state);
  Mat s_post = cond.posterior_cov();
  Vec h = cond.h;
  Mat k = inst.cov.k_uu;
  double kl_moment =
      0.5 * ((k.inverse() * s_post).trace() + h.dot(k.inverse() * h) -
             static_cast<double>(k.rows()) + std::log(k.determinant()) -
             std::log(s_post.determinant()));
  CHECK(kl_u(inst.cov, inst.state, cond) ==
        doctest::Approx(kl_moment).epsilon(1e-9));
  CHECK(kl_moment > 0.0);
}

TEST_CASE("diagonal couplings make the factorized and joint paths agree") {
  Instance inst = random_instance(3, 4, 23, true);  // diagonal factors
  ConditionalPosterior cond_f = build_conditional(inst.cov, inst.state);
  CHECK(cond_f.factorized());

  VariationalState joint = inst.state;
  joint.factorized = false;
  ConditionalPosterior cond_j = build_conditional(inst.cov, joint);
  CHECK_FALSE(cond_j.factorized());

  MarginalBlocks mf = marginal_qs(inst.cov, cond_f);
  MarginalBlocks mj = marginal_qs(inst.cov, cond_j);
  CHECK((mf.means - mj.means).cwiseAbs().maxCoeff() < 1e-10);
  for (std::size_t l = 0; l < mf.covs.size(); ++l) {
    CHECK((mf.covs[l] - mj.covs[l]).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(kl_u(inst.cov, inst.state, cond_f) ==
        doctest::Approx(kl_u(inst.cov, joint, cond_j)).epsilon(1e-10));
}

TEST_CASE("states without sites or with mismatched counts are rejected") {
  Lattice g = make_grid({2, 2});
  std::vector<KernelSpec> kernels = {{1.0, 1.0}, {2.0, 2.0}};
  BlockCovariance cov = assemble_covariance(g, Mat(0, 2), kernels);
  VariationalState state;
  state.pseudo_locations = Mat(0, 2);
  CHECK_THROWS_AS(state.validate(2), Error);

  // A well-formed state against a covariance with a different site count.
  Instance inst = random_instance(2, 3, 3, false);
  BlockCovariance two = assemble_covariance(
      g, Mat::Zero(2, 2), {{1.0, 1.0}, {2.0, 2.0}});
  CHECK_THROWS_AS(build_conditional(two, inst.state), Error);
}

TEST_CASE("single-component restriction agrees with the joint computation") {
  // Diagonal couplings, but solved through the joint interleaved path; the
  // per-component restriction must reproduce each diagonal slice.
  Instance inst = random_instance(3, 2, 91, true);
  inst.state.factorized = false;
  ConditionalPosterior cond = build_conditional(inst.cov, inst.state);
  MarginalBlocks joint_mb = marginal_qs(inst.cov, cond);

  for (int i = 0; i < 3; ++i) {
    BlockCovariance sub_cov = extract_component(inst.cov, i);
    VariationalState sub_state = extract_component(inst.state, i);
    ConditionalPosterior sub_cond = build_conditional(sub_cov, sub_state);
    MarginalBlocks sub_mb = marginal_qs(sub_cov, sub_cond);
    for (int l = 0; l < inst.cov.n_locations; ++l) {
      CHECK(sub_mb.means(l, 0) == doctest::Approx(joint_mb.means(l, i)).epsilon(1e-9));
      CHECK(sub_mb.covs[l](0, 0) ==
            doctest::Approx(joint_mb.covs[l](i, i)).epsilon(1e-9));
    }
  }
}

TEST_CASE("site validation rejects malformed factors") {
  PseudoFactor f;
  f.w_tilde = Mat::Identity(2, 2);
  f.m_tilde = Vec::Zero(2);
  f.w_tilde(0, 1) = 0.3;  // upper triangle must stay empty
  CHECK_THROWS_AS(f.validate(), Error);

  PseudoFactor g;
  g.w_tilde = Mat::Identity(2, 2);
  g.w_tilde(1, 1) = -1.0;
  g.m_tilde = Vec::Zero(2);
  CHECK_THROWS_AS(g.validate(), Error);

  // Factorized states may not carry strictly-lower couplings.
  VariationalState st;
  st.factorized = true;
  st.pseudo_locations = Mat::Zero(1, 2);
  PseudoFactor h;
  h.w_tilde = Mat::Identity(2, 2);
  h.w_tilde(1, 0) = 0.2;
  h.m_tilde = Vec::Zero(2);
  st.factors.push_back(h);
  st.tau_posteriors = {{1.0, 1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(st.validate(2), Error);
}

TEST_CASE("scaled covariance shifts the posterior consistently") {
  // Scaling the prior covariance is the same as solving the scaled problem
  // densely; guards the precision-scaling path used by the mixture model.
  Instance inst = random_instance(2, 3, 55, false);
  Vec taus(2);
  taus << 1.7, 0.6;
  BlockCovariance scaled = scale_by_tau(inst.cov, taus);
  ConditionalPosterior cond = build_conditional(scaled, inst.state);
  reference::DensePosterior dense = reference::dense_posterior(scaled, inst.state);
  CHECK(cond.log_normalizer == doctest::Approx(dense.log_normalizer).epsilon(1e-9));
  CHECK(kl_u(scaled, inst.state, cond) == doctest::Approx(dense.kl_u).epsilon(1e-9));
}
