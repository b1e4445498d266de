#include <doctest.h>
#include <initializer_list>

#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include <nica/block_cov.hpp>
#include <nica/evaluation.hpp>
#include <nica/posterior.hpp>
#include <nica/rng.hpp>

using namespace nica;

namespace {

Mat random_mat(long rows, long cols, std::uint64_t seed) {
  Rng rng = make_stream(seed, StreamTag::Misc);
  Mat out(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) out(r, c) = rng.normal();
  return out;
}

double assignment_total(const Mat& scores, const std::vector<int>& matching) {
  double total = 0;
  for (std::size_t i = 0; i < matching.size(); ++i)
    total += scores(static_cast<long>(i), matching[i]);
  return total;
}

bool is_permutation_of_all(const std::vector<int>& matching) {
  std::vector<bool> seen(matching.size(), false);
  for (int j : matching) {
    if (j < 0 || j >= static_cast<int>(matching.size()) || seen[j]) return false;
    seen[j] = true;
  }
  return true;
}

/// Ground truth plus a component-wise affine disguise of it.
struct DisguisedPair {
  std::vector<Mat> truth;
  std::vector<Mat> est;
  std::vector<int> perm;
};

DisguisedPair make_disguised(int n, long m, int samples, std::uint64_t seed) {
  DisguisedPair p;
  p.perm.resize(n);
  for (int i = 0; i < n; ++i) p.perm[i] = (i + 1) % n;  // cyclic shift
  const double signs[] = {-1.0, 1.0, -1.0, 1.0, -1.0};
  const double scales[] = {0.5, 3.0, 7.0, 0.25, 1.5};
  const double shifts[] = {1.0, -2.0, 0.3, 0.0, 4.0};
  for (int s = 0; s < samples; ++s) {
    Mat t = random_mat(n, m, seed + static_cast<std::uint64_t>(s));
    Mat e(n, m);
    for (int i = 0; i < n; ++i)
      e.row(i) = signs[i] * scales[i] * t.row(p.perm[i]).array() + shifts[i];
    p.truth.push_back(t);
    p.est.push_back(e);
  }
  return p;
}

TpNicaModel make_extract_model(bool gp) {
  TpNicaModel model;
  model.kernels = {{1.5, 1.0}, {0.8, 0.6}};
  const double inf = std::numeric_limits<double>::infinity();
  model.nus = gp ? std::vector<double>{inf, inf} : std::vector<double>{4.0, 6.0};
  model.decoder.weights = {Mat::Identity(3, 2)};
  model.decoder.biases = {Vec::Zero(3)};
  model.noise.variances = Vec::Constant(3, 0.1);
  return model;
}

VariationalState make_extract_state(bool with_taus, std::uint64_t seed) {
  VariationalState state;
  Rng rng = make_stream(seed, StreamTag::Misc, 77);
  state.pseudo_locations = Mat(3, 2);
  state.pseudo_locations << 0.2, 0.3, 1.1, 0.9, 0.4, 1.8;
  for (int j = 0; j < 3; ++j) {
    PseudoFactor f;
    f.w_tilde = Mat::Zero(2, 2);
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < r; ++c) f.w_tilde(r, c) = 0.3 * rng.normal();
      f.w_tilde(r, r) = 0.5 + 0.4 * rng.uniform();
    }
    f.m_tilde = Vec(2);
    f.m_tilde << rng.normal(), rng.normal();
    state.factors.push_back(f);
  }
  if (with_taus) state.tau_posteriors = {{3.0, 3.0}, {1.4, 1.4}};
  return state;
}

}  // namespace

TEST_CASE("the matching solver agrees with brute force on random scores") {
  for (long n : {1, 2, 3, 4, 5, 6}) {
    for (std::uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
      Mat scores = random_mat(n, n, seed * 100 + static_cast<std::uint64_t>(n));
      std::vector<int> fast = best_assignment(scores);
      std::vector<int> slow = best_assignment_bruteforce(scores);
      REQUIRE(is_permutation_of_all(fast));
      CHECK(assignment_total(scores, fast) ==
            doctest::Approx(assignment_total(scores, slow)).epsilon(1e-12));
    }
  }
}

TEST_CASE("the matching solver is not greedy") {
  Mat scores(2, 2);
  scores << 10.0, 9.0,  //
      9.0, 1.0;         // row-greedy picks the diagonal for 11; the swap gives 18
  std::vector<int> got = best_assignment(scores);
  CHECK(got == std::vector<int>{1, 0});

  CHECK_THROWS_AS(best_assignment(Mat::Zero(2, 3)), Error);
  CHECK_THROWS_AS(best_assignment(Mat(0, 0)), Error);
  CHECK_THROWS_AS(best_assignment_bruteforce(Mat::Zero(10, 10)), Error);
}

TEST_CASE("the score is invariant to permutation, sign, scale, and shift") {
  DisguisedPair p = make_disguised(4, 60, 3, 900);
  MccReport report = mean_corr_coeff(p.est, p.truth);
  CHECK(report.mcc == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(report.matching.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(report.matching[i] == p.perm[i]);
  CHECK(report.abs_correlations.rows() == 4);
  CHECK(report.abs_correlations.cols() == 4);
  // Identity comparison is also perfect and matches each row to itself.
  MccReport self = mean_corr_coeff(p.truth, p.truth);
  CHECK(self.mcc == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) CHECK(self.matching[i] == i);
  // Independent series score far below a faithful recovery.
  std::vector<Mat> unrelated = {random_mat(4, 60, 1), random_mat(4, 60, 2),
                                random_mat(4, 60, 3)};
  CHECK(mean_corr_coeff(unrelated, p.truth).mcc < 0.5);
}

TEST_CASE("per-sample scoring matches each sample on its own") {
  Mat t = random_mat(2, 80, 417);
  Mat swapped(2, 80);
  swapped.row(0) = t.row(1);
  swapped.row(1) = t.row(0);
  std::vector<Mat> truth = {t, t};
  std::vector<Mat> est = {t, swapped};  // sample 1 recovered in swapped order

  MccOptions per;
  per.per_sample = true;
  CHECK(mean_corr_coeff(est, truth, per).mcc == doctest::Approx(1.0).epsilon(1e-12));
  // Pooled scoring cannot honor two different matchings at once.
  CHECK(mean_corr_coeff(est, truth).mcc < 0.9);
}

TEST_CASE("rank correlation sees through monotone distortion") {
  std::vector<Mat> truth = {random_mat(3, 70, 55), random_mat(3, 70, 56)};
  std::vector<Mat> est;
  for (const Mat& t : truth) est.push_back(t.array().exp().matrix());

  MccOptions ranked;
  ranked.spearman = true;
  MccReport spearman = mean_corr_coeff(est, truth, ranked);
  CHECK(spearman.mcc == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < 3; ++i) CHECK(spearman.matching[i] == i);
  CHECK(mean_corr_coeff(est, truth).mcc < spearman.mcc);
}

TEST_CASE("constant series are reported by side and index") {
  std::vector<Mat> truth = {random_mat(3, 30, 91)};
  std::vector<Mat> est = {random_mat(3, 30, 92)};
  est[0].row(1).setConstant(2.5);
  try {
    mean_corr_coeff(est, truth);
    FAIL("expected a numerical error for the flat estimated component");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numerical);
    CHECK(std::string(e.what()).find("estimated component 1") != std::string::npos);
  }
  est[0] = random_mat(3, 30, 93);
  truth[0].row(0).setZero();
  try {
    mean_corr_coeff(est, truth);
    FAIL("expected a numerical error for the flat true component");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("true component 0") != std::string::npos);
  }
}

TEST_CASE("malformed score inputs are rejected") {
  std::vector<Mat> a = {random_mat(2, 10, 1)};
  CHECK_THROWS_AS(mean_corr_coeff({}, {}), Error);
  CHECK_THROWS_AS(mean_corr_coeff(a, {}), Error);
  std::vector<Mat> b = {random_mat(2, 11, 2)};
  CHECK_THROWS_AS(mean_corr_coeff(a, b), Error);
  std::vector<Mat> c = {random_mat(2, 10, 2), random_mat(3, 10, 3)};
  std::vector<Mat> d = {random_mat(2, 10, 4), random_mat(3, 10, 5)};
  CHECK_THROWS_AS(mean_corr_coeff(c, d), Error);
}

TEST_CASE("linear unmixing recovers heavy-tailed sources") {
  const int n = 3, channels = 5, samples = 3;
  const long m = 500;
  Rng rng = make_stream(3131, StreamTag::Misc);
  Mat mixer(channels, n);
  for (long r = 0; r < channels; ++r)
    for (long c = 0; c < n; ++c) mixer(r, c) = rng.normal();

  std::vector<Mat> sources, observations;
  for (int s = 0; s < samples; ++s) {
    Mat src(n, m);
    for (long i = 0; i < n; ++i)
      for (long l = 0; l < m; ++l) {
        const double v = rng.uniform() - 0.5;  // Laplace via inverse CDF
        src(i, l) = (v < 0 ? 1.0 : -1.0) * std::log(1.0 - 2.0 * std::abs(v));
      }
    sources.push_back(src);
    observations.push_back(mixer * src);
  }

  IcaResult ica = linear_ica(observations, n, 7);
  CHECK(ica.converged);
  CHECK(ica.iterations >= 1);
  REQUIRE(ica.components.size() == static_cast<std::size_t>(samples));
  for (const Mat& comp : ica.components) {
    CHECK(comp.rows() == n);
    CHECK(comp.cols() == m);
  }
  CHECK(mean_corr_coeff(ica.components, sources).mcc > 0.95);
}

TEST_CASE("degenerate unmixing problems are rejected") {
  CHECK_THROWS_AS(linear_ica({}, 2, 0), Error);
  std::vector<Mat> thin = {random_mat(2, 50, 8)};
  CHECK_THROWS_AS(linear_ica(thin, 3, 0), Error);

  // Perfectly collinear channels: the whitening stage must refuse to invert
  // a rank-one covariance into two components.
  Mat base = random_mat(1, 200, 9);
  Mat obs(4, 200);
  for (int r = 0; r < 4; ++r) obs.row(r) = (r + 1.0) * base;
  try {
    linear_ica({obs}, 2, 0);
    FAIL("expected a rank-deficiency error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numerical);
  }
}

TEST_CASE("posterior component extraction follows the marginal means") {
  Lattice lattice = make_grid({2, 3});
  TpNicaModel model = make_extract_model(false);
  std::vector<VariationalState> states = {make_extract_state(true, 1),
                                          make_extract_state(true, 2)};

  std::vector<Mat> comps = extract_components(model, states, lattice);
  REQUIRE(comps.size() == 2);
  for (std::size_t s = 0; s < comps.size(); ++s) {
    CHECK(comps[s].rows() == 2);
    CHECK(comps[s].cols() == lattice.count());
    BlockCovariance cov = assemble_covariance(lattice, states[s].pseudo_locations,
                                              model.kernels);
    Vec taus(2);
    for (int i = 0; i < 2; ++i)
      taus[i] = states[s].tau_posteriors[i].shape / states[s].tau_posteriors[i].rate;
    ConditionalPosterior cond =
        build_conditional(scale_by_tau(cov, taus), states[s]);
    MarginalBlocks marg = marginal_qs(scale_by_tau(cov, taus), cond);
    CHECK((comps[s] - marg.means.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("scale posteriors at mean one reproduce the limit extraction") {
  Lattice lattice = make_grid({2, 2});
  // Both states share factors; the first carries unit-mean scale posteriors.
  VariationalState with_taus = make_extract_state(true, 5);
  VariationalState without = make_extract_state(false, 5);

  std::vector<Mat> tp =
      extract_components(make_extract_model(false), {with_taus}, lattice);
  std::vector<Mat> gp =
      extract_components(make_extract_model(true), {without}, lattice);
  CHECK((tp[0] - gp[0]).cwiseAbs().maxCoeff() == 0.0);

  // A scale posterior away from mean one must change the extraction.
  VariationalState hot = with_taus;
  hot.tau_posteriors[0] = {8.0, 2.0};
  std::vector<Mat> shifted =
      extract_components(make_extract_model(false), {hot}, lattice);
  CHECK((shifted[0] - tp[0]).cwiseAbs().maxCoeff() > 1e-6);

  // Finite degrees of freedom demand scale posteriors.
  CHECK_THROWS_AS(extract_components(make_extract_model(false), {without}, lattice),
                  Error);
  CHECK_THROWS_AS(extract_components(make_extract_model(false), {}, lattice), Error);
}
