#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "nica/config.hpp"
#include "nica/experiment.hpp"

namespace {

void apply_thread_cap() {
#ifdef _OPENMP
  const char* cap = std::getenv("NICA_THREADS");
  if (cap != nullptr) {
    const int n = std::atoi(cap);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

nica::ExperimentConfig resolve_config(const std::string& config_path,
                                      const std::string& model_override,
                                      bool seed_given, std::uint64_t seed) {
  nica::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = nica::load_config(config_path);
  if (!model_override.empty()) cfg.model = model_override;
  if (seed_given) {
    cfg.seed = seed;
    cfg.train.seed = seed;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();

  CLI::App app{"Latent spatial component models: simulate, fit, evaluate."};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_dir, run_dir, resume_path;
  std::string model_override;
  std::uint64_t seed = 0;
  bool force = false;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_flag("--force", force, "overwrite an existing output directory");
    if (needs_out) {
      sub->add_option("--out", out_dir, "output directory")->required();
    }
  };

  CLI::App* gen = app.add_subcommand("generate", "simulate a dataset");
  gen->add_option("--config", config_path, "experiment config (JSON)");
  gen->add_option("--seed", seed, "override the config seed");
  gen->add_option("--model", model_override, "override the model family")
      ->check(CLI::IsMember({"tp", "gp"}));
  add_common(gen, true);

  CLI::App* train = app.add_subcommand("train", "fit a model to a dataset");
  train->add_option("--config", config_path, "experiment config (JSON)");
  train->add_option("--data", dataset_dir, "dataset directory")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--model", model_override, "override the model family")
      ->check(CLI::IsMember({"tp", "gp"}));
  train->add_option("--resume", resume_path, "checkpoint directory to resume from");
  add_common(train, true);

  CLI::App* eval = app.add_subcommand("evaluate", "score a finished run");
  eval->add_option("--run", run_dir, "training run directory")->required();
  eval->add_option("--data", dataset_dir, "dataset directory")->required();
  add_common(eval, true);

  CLI::App* sweep = app.add_subcommand("sweep", "run a grid of experiments");
  sweep->add_option("--config", config_path, "sweep spec (JSON)")->required();
  add_common(sweep, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      nica::ExperimentConfig cfg = resolve_config(
          config_path, model_override, gen->count("--seed") > 0, seed);
      nica::cmd_generate(cfg, out_dir, force);
      std::printf("generate: wrote %s\n", out_dir.c_str());
    } else if (train->parsed()) {
      nica::ExperimentConfig cfg = resolve_config(
          config_path, model_override, train->count("--seed") > 0, seed);
      nica::TrainOutputs out =
          nica::cmd_train(cfg, dataset_dir, out_dir, resume_path, force);
      const auto& trace = out.result.trace;
      if (!trace.empty()) {
        std::printf("train: %zu steps, final objective %.6f\n", trace.size(),
                    trace.back().elbo);
      }
      std::printf("train: wrote %s\n", out.run_dir.c_str());
    } else if (eval->parsed()) {
      nica::EvalOutputs out =
          nica::cmd_evaluate(run_dir, dataset_dir, out_dir, force);
      std::printf("evaluate: mcc %.4f (linear baseline %.4f%s)\n", out.mcc_model,
                  out.mcc_linear,
                  out.linear_converged ? "" : ", baseline did not converge");
      std::printf("evaluate: wrote %s\n", out.dir.c_str());
    } else if (sweep->parsed()) {
      nica::SweepSpec spec = nica::load_sweep(config_path);
      std::vector<nica::SweepCellResult> cells =
          nica::cmd_sweep(spec, out_dir, force);
      int failed = 0;
      for (const auto& c : cells) {
        if (!c.ok) ++failed;
      }
      std::printf("sweep: %zu rows, %d failed cells, wrote %s\n", cells.size(),
                  failed, out_dir.c_str());
      if (failed > 0) return 1;
    }
  } catch (const nica::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == nica::ErrorKind::Config ? 2 : 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
