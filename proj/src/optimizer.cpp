#include "nica/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>

#include "nica/rng.hpp"

namespace nica {

namespace {

/// Advances one Adam slot and returns the ascent update (the objective is
/// maximized, so callers add the result).
Vec adam_step(AdamSlot* slot, const Vec& grad, double lr, const TrainConfig& cfg) {
  if (slot->m.size() == 0) {
    slot->m = Vec::Zero(grad.size());
    slot->v = Vec::Zero(grad.size());
  }
  slot->t += 1;
  slot->m = cfg.beta1 * slot->m + (1.0 - cfg.beta1) * grad;
  slot->v = cfg.beta2 * slot->v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad).eval();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot->t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot->t));
  Vec update = lr * (slot->m / c1).array() /
               ((slot->v / c2).array().sqrt() + cfg.adam_eps);
  return update;
}

std::vector<int> epoch_order(int n_samples, std::uint64_t seed, long epoch) {
  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, StreamTag::Shuffle, static_cast<std::uint64_t>(epoch));
  for (int i = n_samples - 1; i > 0; --i) {
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::Config, "train: epochs must be at least one");
  require(minibatch >= 1, ErrorKind::Config, "train: minibatch must be at least one");
  require(n_tau >= 1 && n_draws >= 1, ErrorKind::Config,
          "train: draw counts must be at least one");
  require(lr_variational > 0 && lr_model > 0, ErrorKind::Config,
          "train: learning rates must be positive");
  require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, ErrorKind::Config,
          "train: Adam betas must lie in (0, 1)");
}

long steps_per_epoch(int n_samples, int minibatch) {
  return (static_cast<long>(n_samples) + minibatch - 1) / minibatch;
}

TrainResult train(const TpNicaModel& init_model,
                  const std::vector<VariationalState>& init_states,
                  const Lattice& lattice, const std::vector<Mat>& observations,
                  const TrainConfig& config, const TrainerSnapshot* resume,
                  const CheckpointHook& hook) {
  config.validate();
  init_model.validate();
  const int n_samples = static_cast<int>(observations.size());
  require(n_samples >= 1, ErrorKind::Config, "train: at least one sample required");
  require(init_states.size() == observations.size(), ErrorKind::Config,
          "train: one variational state per sample required");
  for (const VariationalState& s : init_states) s.validate(init_model.n_components());

  ParamPacker packer(init_model, init_states.front());

  TrainerSnapshot snap;
  if (resume != nullptr) {
    snap = *resume;
    require(snap.model.size() == packer.model_size() &&
                snap.pseudo.size() == packer.pseudo_size() &&
                static_cast<int>(snap.variational.size()) == n_samples,
            ErrorKind::Config, "train: resume snapshot does not match the problem");
  } else {
    snap.next_step = 0;
    snap.model = packer.pack_model(init_model);
    snap.pseudo = packer.pack_pseudo(init_states.front());
    snap.variational.resize(n_samples);
    snap.adam_variational.resize(n_samples);
    for (int s = 0; s < n_samples; ++s)
      snap.variational[s] = packer.pack_variational(init_states[s]);
  }
  if (snap.adam_variational.empty()) snap.adam_variational.resize(n_samples);

  const long spe = steps_per_epoch(n_samples, config.minibatch);
  const long total_steps = spe * config.epochs;
  const int m = static_cast<int>(lattice.count());
  const int n_comp = init_model.n_components();

  TrainResult result;
  const auto t_start = std::chrono::steady_clock::now();

  for (long step = snap.next_step; step < total_steps; ++step) {
    const long epoch = step / spe;
    const long pos = step % spe;
    std::vector<int> order = epoch_order(n_samples, config.seed, epoch);
    const long lo = pos * config.minibatch;
    const long hi = std::min<long>(lo + config.minibatch, n_samples);
    const int batch = static_cast<int>(hi - lo);

    std::vector<ElboGradient> grads(batch);
    std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < batch; ++b) {
      try {
        const int sample = order[lo + b];
        TpNicaModel model = init_model;
        packer.unpack_model(snap.model, &model);
        VariationalState state = init_states[sample];
        packer.unpack_variational(snap.variational[sample], &state);
        packer.unpack_pseudo(snap.pseudo, &state);
        BaseRandomness rand = make_base_randomness(
            config.n_tau, config.n_draws, m, n_comp, config.seed,
            static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(sample));
        grads[b] = elbo_gradient(model, state, lattice, observations[sample], rand);
      } catch (...) {
#pragma omp critical
        {
          if (!first_error) first_error = std::current_exception();
        }
      }
    }
    if (first_error) std::rethrow_exception(first_error);

    // Batch-mean objective: deterministic ordered reduction over the batch.
    Vec g_model = Vec::Zero(packer.model_size());
    Vec g_pseudo = Vec::Zero(packer.pseudo_size());
    std::vector<Vec> g_var(batch);
    double mean_elbo = 0, mean_data = 0, mean_klu = 0, mean_kltau = 0;
    for (int b = 0; b < batch; ++b) {
      g_model += grads[b].model;
      g_pseudo += grads[b].pseudo;
      g_var[b] = grads[b].variational / batch;
      mean_elbo += grads[b].estimate.value;
      mean_data += grads[b].estimate.data_term;
      mean_klu += grads[b].estimate.kl_u;
      mean_kltau += grads[b].estimate.kl_tau;
    }
    g_model /= batch;
    g_pseudo /= batch;
    mean_elbo /= batch;
    mean_data /= batch;
    mean_klu /= batch;
    mean_kltau /= batch;

    if (config.clip_norm > 0) {
      double sq = g_model.squaredNorm() + g_pseudo.squaredNorm();
      for (int b = 0; b < batch; ++b) sq += g_var[b].squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > config.clip_norm) {
        const double scale = config.clip_norm / norm;
        g_model *= scale;
        g_pseudo *= scale;
        for (int b = 0; b < batch; ++b) g_var[b] *= scale;
        snap.clip_events += 1;
      }
    }

    snap.model += adam_step(&snap.adam_model, g_model, config.lr_model, config);
    snap.pseudo += adam_step(&snap.adam_pseudo, g_pseudo, config.lr_variational, config);
    for (int b = 0; b < batch; ++b) {
      const int sample = order[lo + b];
      snap.variational[sample] += adam_step(&snap.adam_variational[sample], g_var[b],
                                            config.lr_variational, config);
    }

    TraceRow row;
    row.step = step;
    row.epoch = static_cast<int>(epoch);
    row.elbo = mean_elbo;
    row.data_term = mean_data;
    row.kl_u = mean_klu;
    row.kl_tau = mean_kltau;
    row.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    result.trace.push_back(row);

    snap.next_step = step + 1;
    if (hook && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 &&
        step + 1 < total_steps)
      hook(snap, step + 1, static_cast<int>(epoch));
  }

  result.model = init_model;
  packer.unpack_model(snap.model, &result.model);
  result.states = init_states;
  for (int s = 0; s < n_samples; ++s) {
    packer.unpack_variational(snap.variational[s], &result.states[s]);
    packer.unpack_pseudo(snap.pseudo, &result.states[s]);
  }
  result.snapshot = std::move(snap);
  if (hook) hook(result.snapshot, total_steps, config.epochs - 1);
  return result;
}

}  // namespace nica
