#include "nica/mixing.hpp"

#include <cmath>

#include "nica/rng.hpp"

namespace nica {

void MixingNetwork::validate() const {
  require(!weights.empty() && weights.size() == biases.size(),
          ErrorKind::Config, "mixing network: missing layers");
  require(leak > 0.0 && leak <= 1.0, ErrorKind::Config,
          "mixing network: leak must be in (0, 1]");
  const int m = out_dim();
  require(m >= in_dim(), ErrorKind::Config,
          "mixing network: output dimension must be at least the input dimension");
  long prev = weights.front().cols();
  for (std::size_t k = 0; k < weights.size(); ++k) {
    require(weights[k].cols() == prev, ErrorKind::Config,
            "mixing network: layer input size mismatch");
    require(weights[k].rows() == m, ErrorKind::Config,
            "mixing network: every layer must output the observed dimension");
    require(biases[k].size() == weights[k].rows(), ErrorKind::Config,
            "mixing network: bias size mismatch");
    prev = weights[k].rows();
  }
}

Mat mix(const MixingNetwork& net, const Mat& s) {
  net.validate();
  require(s.rows() == net.in_dim(), ErrorKind::Config,
          "mix: component dimension mismatch");
  Mat h = s;
  for (int k = 0; k < net.layers(); ++k) {
    Mat z = net.weights[k] * h;
    z.colwise() += net.biases[k];
    if (k + 1 < net.layers()) {
      const double a = net.leak;
      z = z.unaryExpr([a](double v) { return leaky_tanh(v, a); });
    }
    h = std::move(z);
  }
  return h;
}

double observation_loglik(const Mat& x, const Mat& mixed,
                          const ObservationNoise& noise) {
  noise.validate();
  require(x.rows() == mixed.rows() && x.cols() == mixed.cols(),
          ErrorKind::Config, "observation_loglik: shape mismatch");
  require(noise.variances.size() == x.rows(), ErrorKind::Config,
          "observation_loglik: need one variance per channel");
  const double log2pi = std::log(2.0 * M_PI);
  double total = 0.0;
  for (long c = 0; c < x.rows(); ++c) {
    double v = noise.variances[c];
    double sq = (x.row(c) - mixed.row(c)).squaredNorm();
    total += -0.5 * (x.cols() * (log2pi + std::log(v)) + sq / v);
  }
  return total;
}

namespace {

Mat random_orthonormal_columns(int rows, int cols, Rng* rng) {
  Mat g(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) g(r, c) = rng->normal();
  }
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(rows, cols);
  // Fix the sign convention so the draw is deterministic across backends.
  for (int c = 0; c < cols; ++c) {
    if (q(0, c) < 0.0) q.col(c) = -q.col(c);
  }
  return q;
}

}  // namespace

MixingNetwork make_ground_truth_mixing(int n_in, int n_out, int layers,
                                       std::uint64_t seed) {
  require(n_in > 0 && n_out >= n_in, ErrorKind::Config,
          "ground truth mixing: need n_out >= n_in > 0");
  require(layers > 0, ErrorKind::Config, "ground truth mixing: need layers > 0");
  MixingNetwork net;
  Rng rng = make_stream(seed, StreamTag::ModelInit, 0x6d6978 /* "mix" */);
  for (int k = 0; k < layers; ++k) {
    int in = k == 0 ? n_in : n_out;
    Mat w = random_orthonormal_columns(n_out, in, &rng);
    Eigen::JacobiSVD<Mat> svd(w);
    double cond = svd.singularValues()(0) /
                  svd.singularValues()(svd.singularValues().size() - 1);
    require(cond < 10.0, ErrorKind::Numerical,
            "ground truth mixing: conditioning bound violated");
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vec::Zero(n_out));
  }
  net.validate();
  return net;
}

Dataset generate_dataset(const Lattice& lattice,
                         const std::vector<TpPrior>& priors,
                         const MixingNetwork& net, double noise_fraction,
                         int n_samples, std::uint64_t seed) {
  require(n_samples > 0, ErrorKind::Config, "generate_dataset: need samples");
  require(noise_fraction >= 0.0, ErrorKind::Config,
          "generate_dataset: noise fraction must be non-negative");
  require(net.in_dim() == static_cast<int>(priors.size()), ErrorKind::Config,
          "generate_dataset: network input must match component count");

  ComponentSampler sampler(lattice, priors);
  const int n = sampler.n_components();
  const int m = sampler.n_locations();
  const int mm = net.out_dim();

  Dataset ds;
  ds.components.resize(n_samples);
  ds.observations.resize(n_samples);
  ds.taus.resize(n_samples, n);

#pragma omp parallel for schedule(static)
  for (int s = 0; s < n_samples; ++s) {
    ComponentDraw draw = sampler.draw(seed, s);
    ds.components[s] = draw.components;
    ds.taus.row(s) = draw.taus.transpose();
    ds.observations[s] = mix(net, draw.components);
  }

  // Noise level calibrated against the empirical noise-free signal variance.
  ds.signal_variances = Vec::Zero(mm);
  Vec means = Vec::Zero(mm);
  const double count = static_cast<double>(n_samples) * m;
  for (int s = 0; s < n_samples; ++s) means += ds.observations[s].rowwise().sum();
  means /= count;
  for (int s = 0; s < n_samples; ++s) {
    ds.signal_variances +=
        (ds.observations[s].colwise() - means).rowwise().squaredNorm();
  }
  ds.signal_variances /= count;
  ds.noise_variances = noise_fraction * ds.signal_variances;

  if (noise_fraction > 0.0) {
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n_samples; ++s) {
      Rng stream = make_stream(seed, StreamTag::ObservationNoise, s);
      for (int l = 0; l < m; ++l) {
        for (int c = 0; c < mm; ++c) {
          ds.observations[s](c, l) +=
              std::sqrt(ds.noise_variances[c]) * stream.normal();
        }
      }
    }
  }
  return ds;
}

}  // namespace nica
