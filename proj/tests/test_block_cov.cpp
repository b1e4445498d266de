#include <doctest.h>

#include <initializer_list>

#include <vector>

#include "nica/block_cov.hpp"

using namespace nica;

namespace {

BlockCovariance small_cov() {
  Lattice g = make_grid({2, 2});
  Mat pseudo(3, 2);
  pseudo << 0.2, 0.3, 1.1, 0.4, 0.9, 0.9;
  std::vector<KernelSpec> kernels = {{1.0, 1.0}, {2.0, 3.0}};
  return assemble_covariance(g, pseudo, kernels);
}

}  // namespace

TEST_CASE("assembled covariance has interleaved component blocks") {
  Lattice g = make_grid({2, 2});
  Mat pseudo(3, 2);
  pseudo << 0.2, 0.3, 1.1, 0.4, 0.9, 0.9;
  std::vector<KernelSpec> kernels = {{1.0, 1.0}, {2.0, 3.0}};
  BlockCovariance cov = assemble_covariance(g, pseudo, kernels);

  REQUIRE(cov.n_components == 2);
  REQUIRE(cov.n_locations == 4);
  REQUIRE(cov.n_pseudo == 3);
  REQUIRE(cov.k_ss.rows() == 8);
  REQUIRE(cov.k_su.rows() == 8);
  REQUIRE(cov.k_su.cols() == 6);
  REQUIRE(cov.k_uu.rows() == 6);

  double jit = covariance_jitter(kernels);
  CHECK(jit == doctest::Approx(3e-6).epsilon(1e-9));
  CHECK(cov.jitter == doctest::Approx(jit));

  for (int l = 0; l < 4; ++l) {
    for (int l2 = 0; l2 < 4; ++l2) {
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          double got = cov.k_ss(l * 2 + i, l2 * 2 + j);
          if (i != j) {
            CHECK(got == 0.0);  // independent components never covary
          } else {
            double want = kernel_eval(kernels[i], g.locations.row(l).transpose(),
                                      g.locations.row(l2).transpose());
            if (l == l2) want += jit;
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
          }
        }
      }
    }
  }
  // Cross covariance carries no jitter and no cross-component terms.
  for (int l = 0; l < 4; ++l) {
    for (int q = 0; q < 3; ++q) {
      for (int i = 0; i < 2; ++i) {
        double want = kernel_eval(kernels[i], g.locations.row(l).transpose(),
                                  pseudo.row(q).transpose());
        CHECK(cov.k_su(l * 2 + i, q * 2 + i) == doctest::Approx(want).epsilon(1e-12));
        CHECK(cov.k_su(l * 2 + i, q * 2 + (1 - i)) == 0.0);
      }
    }
  }
}

TEST_CASE("component-major permutation exposes per-component blocks") {
  BlockCovariance cov = small_cov();
  std::vector<int> perm = component_major_permutation(cov.n_locations, 2);
  Mat reordered = permute_matrix(cov.k_ss, perm, perm);

  // After reordering, the matrix is block diagonal with one m x m block per
  // component; off-diagonal blocks vanish.
  const int m = cov.n_locations;
  CHECK(reordered.block(0, m, m, m).cwiseAbs().maxCoeff() == 0.0);
  CHECK(reordered.block(m, 0, m, m).cwiseAbs().maxCoeff() == 0.0);

  Lattice g = make_grid({2, 2});
  std::vector<KernelSpec> kernels = {{1.0, 1.0}, {2.0, 3.0}};
  for (int i = 0; i < 2; ++i) {
    Mat want = kernel_matrix(kernels[i], g.locations, g.locations) +
               cov.jitter * Mat::Identity(m, m);
    Mat got = reordered.block(i * m, i * m, m, m);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("permutation round trip restores the original matrix") {
  BlockCovariance cov = small_cov();
  std::vector<int> perm = component_major_permutation(cov.n_locations, 2);
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  }
  Mat there = permute_matrix(cov.k_ss, perm, perm);
  Mat back = permute_matrix(there, inv, inv);
  CHECK((back - cov.k_ss).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scaling by the latent precisions divides per-component entries") {
  BlockCovariance cov = small_cov();
  Vec taus(2);
  taus << 2.0, 0.5;
  BlockCovariance scaled = scale_by_tau(cov, taus);
  for (int l = 0; l < cov.n_locations; ++l) {
    for (int l2 = 0; l2 < cov.n_locations; ++l2) {
      for (int i = 0; i < 2; ++i) {
        CHECK(scaled.k_ss(l * 2 + i, l2 * 2 + i) ==
              doctest::Approx(cov.k_ss(l * 2 + i, l2 * 2 + i) / taus[i])
                  .epsilon(1e-14));
      }
    }
  }
  for (int q = 0; q < cov.n_pseudo; ++q) {
    for (int q2 = 0; q2 < cov.n_pseudo; ++q2) {
      for (int i = 0; i < 2; ++i) {
        CHECK(scaled.k_uu(q * 2 + i, q2 * 2 + i) ==
              doctest::Approx(cov.k_uu(q * 2 + i, q2 * 2 + i) / taus[i])
                  .epsilon(1e-14));
      }
    }
  }
  CHECK_THROWS_AS(scale_by_tau(cov, Vec::Zero(2)), Error);
}

TEST_CASE("assembly validates inputs") {
  Lattice g = make_grid({2, 2});
  Mat pseudo(2, 3);  // wrong spatial dimension
  pseudo.setZero();
  std::vector<KernelSpec> kernels = {{1.0, 1.0}};
  CHECK_THROWS_AS(assemble_covariance(g, pseudo, kernels), Error);
  CHECK_THROWS_AS(assemble_covariance(g, Mat(0, 2), {}), Error);
}
