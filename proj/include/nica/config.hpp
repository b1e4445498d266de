#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nica/lattice.hpp"
#include "nica/optimizer.hpp"

namespace nica {

struct EvalConfig {
  int n_tau = 4;
  int n_draws = 8;
  bool per_sample = false;
  bool spearman = false;
};

/// One experiment cell: data geometry, model family, and training settings.
/// Loaded from JSON; CLI flags override individual fields; the fully
/// resolved form is echoed into every output manifest.
struct ExperimentConfig {
  std::vector<int> lattice_shape = {16, 16};
  int n_components = 3;
  int n_observed = 6;
  int mixing_layers = 2;
  std::string kernel_regime = "distinct";  // "distinct" | "equal"
  std::string model = "tp";                // "tp" | "gp"
  double nu = 4.0;
  double noise_fraction = 0.1;
  int sample_count = 64;
  int n_pseudo = 25;
  bool factorized = false;
  bool learn_kernels = true;
  std::uint64_t seed = 0;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  bool is_gp() const { return model == "gp"; }
  /// Degrees of freedom per component under the configured family.
  std::vector<double> resolved_nus() const;
};

/// Generation-time kernels for the configured regime: "distinct" spaces
/// lengthscales geometrically over one decade, "equal" gives every component
/// the decade's geometric midpoint.  Unit variance throughout.
std::vector<KernelSpec> resolve_kernels(const std::string& regime, int n_components);

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json_text(const ExperimentConfig& config);

}  // namespace nica
