#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nica/elbo.hpp"

namespace nica {

struct TrainConfig {
  int epochs = 40;
  int minibatch = 8;
  int n_tau = 1;    // scale draws per objective evaluation
  int n_draws = 1;  // latent draws per scale draw
  double lr_variational = 1e-1;  // variational factors, scale posteriors, pseudo inputs
  double lr_model = 1e-4;        // decoder, noise, kernel parameters
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 100.0;  // global-norm gradient clip; <=0 disables
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // steps between snapshot hooks; 0 = final only

  void validate() const;
};

struct TraceRow {
  long step = 0;
  int epoch = 0;
  double elbo = 0.0;
  double data_term = 0.0;
  double kl_u = 0.0;
  double kl_tau = 0.0;
  double wallclock_s = 0.0;
};

/// Adam first/second moments plus the per-tensor update count (samples not in
/// a minibatch keep their counts, so sparse updates stay unbiased).
struct AdamSlot {
  Vec m, v;
  long t = 0;
};

/// Complete optimizer state: enough to continue training bit-for-bit.
struct TrainerSnapshot {
  long next_step = 0;
  Vec model;
  std::vector<Vec> variational;  // one packed vector per data sample
  Vec pseudo;
  AdamSlot adam_model, adam_pseudo;
  std::vector<AdamSlot> adam_variational;
  long clip_events = 0;
};

struct TrainResult {
  TpNicaModel model;
  std::vector<VariationalState> states;  // per sample, sharing pseudo inputs
  std::vector<TraceRow> trace;           // rows for the steps run in this call
  TrainerSnapshot snapshot;
};

using CheckpointHook =
    std::function<void(const TrainerSnapshot& snapshot, long step, int epoch)>;

long steps_per_epoch(int n_samples, int minibatch);

/// Stochastic natural-parameter-free training loop: Adam on the packed
/// unconstrained parameters, minibatched over samples, reparameterized
/// objective evaluations keyed by (seed, step, sample) so that interrupted
/// and resumed runs take identical trajectories.
TrainResult train(const TpNicaModel& init_model,
                  const std::vector<VariationalState>& init_states,
                  const Lattice& lattice, const std::vector<Mat>& observations,
                  const TrainConfig& config,
                  const TrainerSnapshot* resume = nullptr,
                  const CheckpointHook& hook = nullptr);

}  // namespace nica
