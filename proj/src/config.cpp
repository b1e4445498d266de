#include "nica/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace nica {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    require(known.count(it.key()) > 0, ErrorKind::Config,
            "config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T* out) {
  if (!obj.contains(key)) return;
  try {
    *out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw_config(std::string("config: field '") + key + "' has the wrong type");
  }
}

}  // namespace

std::vector<double> ExperimentConfig::resolved_nus() const {
  const double value = is_gp() ? std::numeric_limits<double>::infinity() : nu;
  return std::vector<double>(static_cast<std::size_t>(n_components), value);
}

void ExperimentConfig::validate() const {
  require(lattice_shape.size() >= 1 && lattice_shape.size() <= 3, ErrorKind::Config,
          "config: lattice_shape must have one to three axes");
  for (int extent : lattice_shape)
    require(extent >= 1, ErrorKind::Config, "config: lattice extents must be positive");
  require(n_components >= 1, ErrorKind::Config, "config: n_components must be positive");
  require(n_observed >= n_components, ErrorKind::Config,
          "config: n_observed must be at least n_components");
  require(mixing_layers >= 1 && mixing_layers <= 4, ErrorKind::Config,
          "config: mixing_layers must lie in 1..4");
  require(kernel_regime == "distinct" || kernel_regime == "equal", ErrorKind::Config,
          "config: kernel_regime must be 'distinct' or 'equal'");
  require(model == "tp" || model == "gp", ErrorKind::Config,
          "config: model must be 'tp' or 'gp'");
  require(nu > 0.0, ErrorKind::Config, "config: nu must be positive");
  require(noise_fraction >= 0.0, ErrorKind::Config,
          "config: noise_fraction must be non-negative");
  require(sample_count >= 1, ErrorKind::Config, "config: sample_count must be positive");
  require(n_pseudo >= 1, ErrorKind::Config, "config: n_pseudo must be positive");
  train.validate();
  require(eval.n_tau >= 1 && eval.n_draws >= 1, ErrorKind::Config,
          "config: evaluation draw counts must be positive");
}

std::vector<KernelSpec> resolve_kernels(const std::string& regime, int n_components) {
  require(regime == "distinct" || regime == "equal", ErrorKind::Config,
          "config: kernel_regime must be 'distinct' or 'equal'");
  const double lo = 2.0, hi = 20.0;
  std::vector<KernelSpec> kernels(static_cast<std::size_t>(n_components));
  if (regime == "equal") {
    const double mid = std::sqrt(lo * hi);
    for (KernelSpec& k : kernels) k = {mid, 1.0};
    return kernels;
  }
  if (n_components == 1) {
    kernels[0] = {std::sqrt(lo * hi), 1.0};
    return kernels;
  }
  for (int i = 0; i < n_components; ++i) {
    const double f = static_cast<double>(i) / (n_components - 1);
    kernels[i] = {lo * std::pow(hi / lo, f), 1.0};
  }
  return kernels;
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw_config(std::string("config: invalid JSON: ") + e.what());
  }
  require(root.is_object(), ErrorKind::Config, "config: top level must be an object");
  reject_unknown_keys(root,
                      {"lattice_shape", "n_components", "n_observed", "mixing_layers",
                       "kernel_regime", "model", "nu", "noise_fraction", "sample_count",
                       "n_pseudo", "factorized", "learn_kernels", "seed", "train",
                       "eval"},
                      "the top-level object");

  ExperimentConfig cfg;
  read_field(root, "lattice_shape", &cfg.lattice_shape);
  read_field(root, "n_components", &cfg.n_components);
  read_field(root, "n_observed", &cfg.n_observed);
  read_field(root, "mixing_layers", &cfg.mixing_layers);
  read_field(root, "kernel_regime", &cfg.kernel_regime);
  read_field(root, "model", &cfg.model);
  read_field(root, "nu", &cfg.nu);
  read_field(root, "noise_fraction", &cfg.noise_fraction);
  read_field(root, "sample_count", &cfg.sample_count);
  read_field(root, "n_pseudo", &cfg.n_pseudo);
  read_field(root, "factorized", &cfg.factorized);
  read_field(root, "learn_kernels", &cfg.learn_kernels);
  read_field(root, "seed", &cfg.seed);

  if (root.contains("train")) {
    const json& tr = root.at("train");
    require(tr.is_object(), ErrorKind::Config, "config: 'train' must be an object");
    reject_unknown_keys(tr,
                        {"epochs", "minibatch", "n_tau", "n_draws", "lr_variational",
                         "lr_model", "beta1", "beta2", "adam_eps", "clip_norm",
                         "checkpoint_every"},
                        "'train'");
    read_field(tr, "epochs", &cfg.train.epochs);
    read_field(tr, "minibatch", &cfg.train.minibatch);
    read_field(tr, "n_tau", &cfg.train.n_tau);
    read_field(tr, "n_draws", &cfg.train.n_draws);
    read_field(tr, "lr_variational", &cfg.train.lr_variational);
    read_field(tr, "lr_model", &cfg.train.lr_model);
    read_field(tr, "beta1", &cfg.train.beta1);
    read_field(tr, "beta2", &cfg.train.beta2);
    read_field(tr, "adam_eps", &cfg.train.adam_eps);
    read_field(tr, "clip_norm", &cfg.train.clip_norm);
    read_field(tr, "checkpoint_every", &cfg.train.checkpoint_every);
  }
  if (root.contains("eval")) {
    const json& ev = root.at("eval");
    require(ev.is_object(), ErrorKind::Config, "config: 'eval' must be an object");
    reject_unknown_keys(ev, {"n_tau", "n_draws", "per_sample", "spearman"}, "'eval'");
    read_field(ev, "n_tau", &cfg.eval.n_tau);
    read_field(ev, "n_draws", &cfg.eval.n_draws);
    read_field(ev, "per_sample", &cfg.eval.per_sample);
    read_field(ev, "spearman", &cfg.eval.spearman);
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Config, "config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

std::string config_to_json_text(const ExperimentConfig& config) {
  json root;
  root["lattice_shape"] = config.lattice_shape;
  root["n_components"] = config.n_components;
  root["n_observed"] = config.n_observed;
  root["mixing_layers"] = config.mixing_layers;
  root["kernel_regime"] = config.kernel_regime;
  root["model"] = config.model;
  root["nu"] = config.nu;
  root["noise_fraction"] = config.noise_fraction;
  root["sample_count"] = config.sample_count;
  root["n_pseudo"] = config.n_pseudo;
  root["factorized"] = config.factorized;
  root["learn_kernels"] = config.learn_kernels;
  root["seed"] = config.seed;
  root["train"] = {{"epochs", config.train.epochs},
                   {"minibatch", config.train.minibatch},
                   {"n_tau", config.train.n_tau},
                   {"n_draws", config.train.n_draws},
                   {"lr_variational", config.train.lr_variational},
                   {"lr_model", config.train.lr_model},
                   {"beta1", config.train.beta1},
                   {"beta2", config.train.beta2},
                   {"adam_eps", config.train.adam_eps},
                   {"clip_norm", config.train.clip_norm},
                   {"checkpoint_every", config.train.checkpoint_every}};
  root["eval"] = {{"n_tau", config.eval.n_tau},
                  {"n_draws", config.eval.n_draws},
                  {"per_sample", config.eval.per_sample},
                  {"spearman", config.eval.spearman}};
  return root.dump(2) + "\n";
}

}  // namespace nica
