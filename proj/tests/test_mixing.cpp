#include <doctest.h>

#include <initializer_list>

#include <cmath>

#include "nica/mixing.hpp"
#include "nica/reference.hpp"

using namespace nica;

TEST_CASE("single-layer mixing is affine") {
  MixingNetwork net;
  Mat w(3, 2);
  w << 1.0, 0.0, 0.0, 1.0, 1.0, 1.0;
  Vec b(3);
  b << 0.1, 0.2, 0.3;
  net.weights = {w};
  net.biases = {b};

  Mat s(2, 4);
  s << 1, 2, 3, 4, 5, 6, 7, 8;
  Mat x = mix(net, s);
  REQUIRE(x.rows() == 3);
  REQUIRE(x.cols() == 4);
  Mat want = w * s;
  want.colwise() += b;
  CHECK((x - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("activation applies between layers but not after the last") {
  MixingNetwork net;
  Mat w1(2, 2), w2(2, 2);
  w1 << 2.0, 0.0, 0.0, 2.0;
  w2 << 1.0, 0.0, 0.0, 1.0;
  net.weights = {w1, w2};
  net.biases = {Vec::Zero(2), Vec::Zero(2)};
  net.leak = 0.25;

  Mat s(2, 1);
  s << 3.0, -3.0;
  Mat x = mix(net, s);
  // First layer doubles, then the leaky saturating nonlinearity, then identity.
  double h0 = 0.25 * 6.0 + 0.75 * std::tanh(6.0);
  double h1 = 0.25 * -6.0 + 0.75 * std::tanh(-6.0);
  CHECK(x(0, 0) == doctest::Approx(h0).epsilon(1e-14));
  CHECK(x(1, 0) == doctest::Approx(h1).epsilon(1e-14));
}

TEST_CASE("mixing matches the serial reference") {
  MixingNetwork net = make_ground_truth_mixing(3, 5, 3, 21);
  Mat s = Mat::Random(3, 17);
  Mat fast = mix(net, s);
  Mat slow = reference::mix_serial(net, s);
  CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("leaky saturating activation is invertible and monotone") {
  // Strictly increasing with slope bounded below by the leak.
  double prev = leaky_tanh(-10.0, 0.1);
  for (double x = -9.5; x <= 10.0; x += 0.5) {
    double y = leaky_tanh(x, 0.1);
    CHECK(y > prev);
    prev = y;
  }
  CHECK(leaky_tanh(0.0, 0.1) == 0.0);
  // For large inputs the slope approaches the leak alone.
  double d = (leaky_tanh(20.1, 0.1) - leaky_tanh(20.0, 0.1)) / 0.1;
  CHECK(d == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("ground-truth mixing layers are well conditioned") {
  for (int layers : {1, 2, 3}) {
    MixingNetwork net = make_ground_truth_mixing(3, 6, layers, 4);
    REQUIRE(static_cast<int>(net.weights.size()) == layers);
    for (const Mat& w : net.weights) {
      Eigen::JacobiSVD<Mat> svd(w);
      double cond = svd.singularValues()(0) /
                    svd.singularValues()(svd.singularValues().size() - 1);
      CHECK(cond < 10.0);
      CHECK(w.rows() == 6);
    }
    CHECK(net.weights.front().cols() == 3);
  }
  // Deterministic in the seed.
  MixingNetwork a = make_ground_truth_mixing(2, 4, 2, 9);
  MixingNetwork b = make_ground_truth_mixing(2, 4, 2, 9);
  CHECK((a.weights[1] - b.weights[1]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("network validation rejects malformed stacks") {
  MixingNetwork net;
  net.weights = {Mat::Identity(2, 3)};  // output below input
  net.biases = {Vec::Zero(2)};
  CHECK_THROWS_AS(net.validate(), Error);

  MixingNetwork mismatch;
  mismatch.weights = {Mat::Identity(4, 2), Mat::Identity(4, 3)};
  mismatch.biases = {Vec::Zero(4), Vec::Zero(4)};
  CHECK_THROWS_AS(mismatch.validate(), Error);
}

TEST_CASE("observation log likelihood matches the diagonal gaussian formula") {
  ObservationNoise noise;
  noise.variances = Vec(2);
  noise.variances << 0.5, 2.0;
  Mat x(2, 3), mu(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  mu << 1.1, 1.9, 3.2, 3.8, 5.1, 6.3;
  double want = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (int l = 0; l < 3; ++l) {
      double v = noise.variances[c];
      double r = x(c, l) - mu(c, l);
      want += -0.5 * (std::log(2 * M_PI * v) + r * r / v);
    }
  }
  CHECK(observation_loglik(x, mu, noise) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("datasets calibrate noise against the mixed-signal variance") {
  Lattice g = make_grid({4, 4});
  std::vector<TpPrior> priors = {{4.0, {1.0, 1.0}}, {4.0, {2.0, 1.0}}};
  MixingNetwork net = make_ground_truth_mixing(2, 4, 2, 13);
  const double frac = 0.2;
  Dataset ds = generate_dataset(g, priors, net, frac, 40, 13);

  REQUIRE(ds.n_samples() == 40);
  REQUIRE(ds.observations.front().rows() == 4);
  REQUIRE(ds.observations.front().cols() == 16);
  REQUIRE(ds.components.front().rows() == 2);
  REQUIRE(ds.taus.rows() == 40);
  REQUIRE(ds.taus.cols() == 2);

  // The promised ratio holds exactly by construction.
  for (int c = 0; c < 4; ++c) {
    CHECK(ds.noise_variances[c] ==
          doctest::Approx(frac * ds.signal_variances[c]).epsilon(1e-12));
  }

  // The recorded signal variance matches the clean mixtures recomputed here.
  double count = 40.0 * 16.0;
  std::vector<Mat> clean;
  for (int s = 0; s < 40; ++s) clean.push_back(mix(net, ds.components[s]));
  Vec mu = Vec::Zero(4);
  for (const Mat& x : clean) mu += x.rowwise().sum();
  mu /= count;
  Vec var = Vec::Zero(4);
  for (const Mat& x : clean)
    var += (x.colwise() - mu).array().square().matrix().rowwise().sum();
  var /= count;
  for (int c = 0; c < 4; ++c) {
    CHECK(ds.signal_variances[c] == doctest::Approx(var[c]).epsilon(1e-10));
  }

  // Observations differ from the clean mixtures by noise of the right scale.
  double resid = 0.0;
  for (int s = 0; s < 40; ++s) {
    resid += (ds.observations[s] - clean[s]).array().square().sum();
  }
  resid /= count * 4.0;
  double expected = ds.noise_variances.mean();
  CHECK(resid == doctest::Approx(expected).epsilon(0.15));

  // Zero noise fraction reproduces the clean mixtures bitwise.
  Dataset clean_ds = generate_dataset(g, priors, net, 0.0, 3, 13);
  Mat again = mix(net, clean_ds.components[1]);
  CHECK((clean_ds.observations[1] - again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dataset generation is deterministic in the seed") {
  Lattice g = make_grid({3, 3});
  std::vector<TpPrior> priors = {{4.0, {1.0, 1.0}}};
  MixingNetwork net = make_ground_truth_mixing(1, 2, 1, 3);
  Dataset a = generate_dataset(g, priors, net, 0.1, 5, 77);
  Dataset b = generate_dataset(g, priors, net, 0.1, 5, 77);
  for (int s = 0; s < 5; ++s) {
    CHECK((a.observations[s] - b.observations[s]).cwiseAbs().maxCoeff() == 0.0);
  }
  Dataset c = generate_dataset(g, priors, net, 0.1, 5, 78);
  CHECK((a.observations[0] - c.observations[0]).cwiseAbs().maxCoeff() > 0.0);
}
