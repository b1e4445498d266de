#pragma once

#include <vector>

#include "nica/processes.hpp"

namespace nica {

/// Injective multilayer map from component space (N) to observation space
/// (M >= N).  The first layer maps N -> M, later layers M -> M, and the
/// leaky-tanh activation sits between layers (never after the last one), so a
/// single layer is a plain affine map.
struct MixingNetwork {
  std::vector<Mat> weights;  // per layer, out x in
  std::vector<Vec> biases;   // per layer, out
  double leak = 0.1;

  int layers() const { return static_cast<int>(weights.size()); }
  int in_dim() const { return static_cast<int>(weights.front().cols()); }
  int out_dim() const { return static_cast<int>(weights.back().rows()); }
  void validate() const;
};

inline double leaky_tanh(double x, double leak) {
  return leak * x + (1.0 - leak) * std::tanh(x);
}

/// Applies the network column-wise: s is N x m, result is M x m.
Mat mix(const MixingNetwork& net, const Mat& s);

struct ObservationNoise {
  Vec variances;  // per observed channel

  void validate() const {
    require((variances.array() > 0.0).all(), ErrorKind::Config,
            "observation noise variances must be positive");
  }
};

/// Sum over locations and channels of the Gaussian observation log density.
double observation_loglik(const Mat& x, const Mat& mixed,
                          const ObservationNoise& noise);

/// Draws the data-generating network: every layer starts from a matrix with
/// orthonormal columns, which keeps the condition number (checked to be
/// below 10) far from the injectivity failure modes.
MixingNetwork make_ground_truth_mixing(int n_in, int n_out, int layers,
                                       std::uint64_t seed);

struct Dataset {
  std::vector<Mat> observations;  // S entries, each M x m
  std::vector<Mat> components;    // S entries, each N x m
  Mat taus;                       // S x N mixing scales used during generation
  Vec noise_variances;            // per channel, resolved from noise_fraction
  Vec signal_variances;           // per channel, empirical noise-free variance

  int n_samples() const { return static_cast<int>(observations.size()); }
};

/// Samples latent components, mixes them, and adds Gaussian noise whose
/// per-channel variance is noise_fraction times the empirical variance of
/// the noise-free mixed signal.
Dataset generate_dataset(const Lattice& lattice,
                         const std::vector<TpPrior>& priors,
                         const MixingNetwork& net, double noise_fraction,
                         int n_samples, std::uint64_t seed);

}  // namespace nica
