#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nica/common.hpp"
#include "nica/lattice.hpp"
#include "nica/mixing.hpp"
#include "nica/posterior.hpp"

namespace nica {

/// Full generative model: per-component spatial kernels, degrees of freedom
/// (infinite for the Gaussian-process limit), decoder network, and
/// observation noise.
struct TpNicaModel {
  std::vector<KernelSpec> kernels;
  std::vector<double> nus;
  MixingNetwork decoder;
  ObservationNoise noise;
  bool learn_kernels = true;

  int n_components() const { return static_cast<int>(kernels.size()); }
  int n_observed() const { return static_cast<int>(noise.variances.size()); }
  /// True when every component has infinite degrees of freedom, i.e. the
  /// latent priors are Gaussian processes and the scale variables drop out.
  bool gp_limit() const;
  void validate() const;
};

/// Base randomness for one objective evaluation: uniforms feed the Gamma
/// quantile reparameterization (one row per scale draw), normals feed the
/// location-wise latent draws (one matrix per scale draw, (m*N) x n_draws).
struct BaseRandomness {
  Mat uniforms;
  std::vector<Mat> normals;
};

BaseRandomness make_base_randomness(int n_tau, int n_draws, int n_locations,
                                    int n_components, std::uint64_t seed,
                                    std::uint64_t step, std::uint64_t sample_index);

struct ElboEstimate {
  double value = 0.0;
  double data_term = 0.0;  // mean over scale draws and latent draws
  double kl_u = 0.0;       // mean over scale draws
  double kl_tau = 0.0;     // zero in the GP limit
  int n_tau = 0;
  int n_draws = 0;
  /// Latent draws actually used, indexed t * n_draws + s, each m x N.
  std::vector<Mat> component_draws;
  /// Scale draws per t (all ones in the GP limit).
  std::vector<Vec> taus;
};

/// Identifies a contiguous slice of one of the packed parameter vectors.
struct ParamBlock {
  std::string name;
  int group = 0;  // 0 = model, 1 = variational, 2 = pseudo inputs
  long offset = 0;
  long size = 0;
};

/// Maps between the structured model/state and flat unconstrained parameter
/// vectors (positives are log- or inverse-softplus-transformed).  The same
/// layout is used by the optimizer, checkpoints, and gradient tests.
class ParamPacker {
 public:
  ParamPacker(const TpNicaModel& model, const VariationalState& state);

  long model_size() const { return model_size_; }
  long variational_size() const { return variational_size_; }
  long pseudo_size() const { return pseudo_size_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  Vec pack_model(const TpNicaModel& model) const;
  void unpack_model(const Vec& packed, TpNicaModel* model) const;
  Vec pack_variational(const VariationalState& state) const;
  void unpack_variational(const Vec& packed, VariationalState* state) const;
  Vec pack_pseudo(const VariationalState& state) const;
  void unpack_pseudo(const Vec& packed, VariationalState* state) const;

 private:
  std::vector<std::pair<long, long>> layer_shapes_;
  long n_observed_ = 0;
  long n_components_ = 0;
  long n_factors_ = 0;
  long n_pseudo_ = 0;
  long dim_ = 0;
  bool factorized_ = false;
  bool learn_kernels_ = true;
  bool has_tau_ = true;
  long model_size_ = 0, variational_size_ = 0, pseudo_size_ = 0;
  std::vector<ParamBlock> blocks_;
  friend struct PackerAccess;
};

struct ElboGradient {
  ElboEstimate estimate;
  Vec model;        // layout of ParamPacker::pack_model
  Vec variational;  // layout of ParamPacker::pack_variational
  Vec pseudo;       // layout of ParamPacker::pack_pseudo
};

/// Monte Carlo evidence lower bound for one data sample x (n_observed x m).
ElboEstimate elbo_value(const TpNicaModel& model, const VariationalState& state,
                        const Lattice& lattice, const Mat& x,
                        const BaseRandomness& randomness);

/// Same estimate plus reverse-mode gradients with respect to every
/// unconstrained parameter.  Throws a numerical error naming the offending
/// block if any gradient entry is not finite.
ElboGradient elbo_gradient(const TpNicaModel& model, const VariationalState& state,
                           const Lattice& lattice, const Mat& x,
                           const BaseRandomness& randomness);

}  // namespace nica
