#pragma once

#include <string>
#include <vector>

#include "nica/config.hpp"
#include "nica/evaluation.hpp"
#include "nica/mixing.hpp"
#include "nica/optimizer.hpp"

namespace nica {

/// Deterministic initialization shared by the CLI and tests: decoder weights
/// from the model-init stream, noise at a fraction of the observed channel
/// variance, kernels at the decade midpoint when learned, pseudo inputs on
/// an even sweep of the lattice, and unit factors at zero mean.
TpNicaModel make_initial_model(const ExperimentConfig& config,
                               const std::vector<Mat>& observations);
Mat initial_pseudo_locations(const ExperimentConfig& config, const Lattice& lattice);
std::vector<VariationalState> make_initial_states(const ExperimentConfig& config,
                                                  const Lattice& lattice);

struct LoadedDataset {
  Dataset data;
  ExperimentConfig config;
  std::vector<KernelSpec> kernels;
  MixingNetwork mixing;
};

void write_dataset(const std::string& dir, const Dataset& dataset,
                   const MixingNetwork& mixing, const ExperimentConfig& config,
                   const std::vector<KernelSpec>& kernels);
LoadedDataset load_dataset(const std::string& dir);

void write_checkpoint(const std::string& dir, const TrainerSnapshot& snapshot,
                      const ExperimentConfig& config);
TrainerSnapshot read_checkpoint(const std::string& dir,
                                const ExperimentConfig& expected);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);
std::vector<TraceRow> read_trace_csv(const std::string& path);

/// generate: dataset + ground truth + manifest into out_dir.
void cmd_generate(const ExperimentConfig& config, const std::string& out_dir,
                  bool force);

struct TrainOutputs {
  TrainResult result;
  std::string run_dir;
};

/// train: fit the configured model to a generated dataset; writes
/// resolved_config.json, elbo_trace.csv, periodic checkpoints, and final/.
TrainOutputs cmd_train(const ExperimentConfig& config, const std::string& dataset_dir,
                       const std::string& out_dir, const std::string& resume_checkpoint,
                       bool force);

struct EvalOutputs {
  double mcc_model = 0.0;
  double mcc_linear = 0.0;
  bool linear_converged = true;
  double eval_elbo = 0.0;
  std::string dir;
};

/// evaluate: posterior component extraction + MCC against ground truth +
/// linear ICA baseline + report files (CSV, components tensor, SVG plots).
EvalOutputs cmd_evaluate(const std::string& run_dir, const std::string& dataset_dir,
                         const std::string& out_dir, bool force);

struct SweepSpec {
  ExperimentConfig base;
  std::vector<int> layers = {1, 2};
  std::vector<std::string> regimes = {"distinct", "equal"};
  std::vector<std::string> models = {"tp", "gp"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5};
  bool include_linear = true;
};

SweepSpec sweep_from_json_text(const std::string& text);
SweepSpec load_sweep(const std::string& path);

struct SweepCellResult {
  std::string model;  // "tp", "gp", or "linear_ica"
  int layers = 0;
  std::string regime;
  std::uint64_t seed = 0;
  double mcc = 0.0;
  bool ok = false;
  std::string error;
};

/// sweep: generate/train/evaluate per grid cell; per-cell failures are
/// recorded and the sweep continues.  Writes results.csv, aggregate.csv, and
/// mcc_vs_depth.svg.
std::vector<SweepCellResult> cmd_sweep(const SweepSpec& spec,
                                       const std::string& out_dir, bool force);

/// Seed-averaged view of sweep results, one row per (model, layers, regime).
struct SweepAggregate {
  std::string model;
  int layers = 0;
  std::string regime;
  double mean_mcc = 0.0;
  double stderr_mcc = 0.0;
  int n_seeds = 0;
};

std::vector<SweepAggregate> aggregate_sweep(const std::vector<SweepCellResult>& cells);

}  // namespace nica
