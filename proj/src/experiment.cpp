#include "nica/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "nica/rng.hpp"
#include "nica/svg.hpp"
#include "nica/tensor_file.hpp"

namespace nica {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kSchemaVersion = 1;

void prepare_dir(const std::string& dir, bool force) {
  fs::path p(dir);
  if (fs::exists(p)) {
    require(force, ErrorKind::Config,
            "output directory already exists (pass --force to overwrite): " + dir);
    fs::remove_all(p);
  }
  fs::create_directories(p);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::Config, "cannot open for writing: " + path);
  out << text;
  require(out.good(), ErrorKind::Config, "write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Config, "cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json manifest_header(const char* kind, const ExperimentConfig& config) {
  json root;
  root["schema_version"] = kSchemaVersion;
  root["kind"] = kind;
  root["config"] = json::parse(config_to_json_text(config));
  return root;
}

json load_manifest(const std::string& dir, const char* kind) {
  json root;
  try {
    root = json::parse(read_text(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw_config("manifest: invalid JSON in " + dir + ": " + e.what());
  }
  require(root.value("schema_version", -1) == kSchemaVersion, ErrorKind::Config,
          "manifest: unsupported schema version in " + dir);
  require(root.value("kind", "") == kind, ErrorKind::Config,
          "manifest: expected kind '" + std::string(kind) + "' in " + dir);
  return root;
}

Vec json_to_vec(const json& arr) {
  Vec v(static_cast<long>(arr.size()));
  for (long i = 0; i < v.size(); ++i) v[i] = arr[static_cast<std::size_t>(i)].get<double>();
  return v;
}

json vec_to_json(const Vec& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

double sample_stderr(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (static_cast<double>(xs.size()) - 1.0) /
                   static_cast<double>(xs.size()));
}

}  // namespace

TpNicaModel make_initial_model(const ExperimentConfig& config,
                               const std::vector<Mat>& observations) {
  const int n = config.n_components;
  const int m_obs = config.n_observed;
  TpNicaModel model;
  model.nus = config.resolved_nus();
  model.learn_kernels = config.learn_kernels;
  if (config.learn_kernels) {
    model.kernels.assign(static_cast<std::size_t>(n), resolve_kernels("equal", 1).front());
  } else {
    model.kernels = resolve_kernels(config.kernel_regime, n);
  }

  Rng rng = make_stream(config.seed, StreamTag::ModelInit, 0x696e6974ull);
  for (int k = 0; k < config.mixing_layers; ++k) {
    const int in = (k == 0) ? n : m_obs;
    Mat w(m_obs, in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (long r = 0; r < w.rows(); ++r)
      for (long c = 0; c < w.cols(); ++c) w(r, c) = scale * rng.normal();
    model.decoder.weights.push_back(w);
    model.decoder.biases.push_back(Vec::Zero(m_obs));
  }
  model.decoder.leak = 0.1;

  // Noise starts at a tenth of each channel's empirical variance.
  Vec channel_var = Vec::Ones(m_obs);
  if (!observations.empty()) {
    const long m = observations.front().cols();
    const double total = static_cast<double>(m) * observations.size();
    Vec mean = Vec::Zero(m_obs);
    for (const Mat& x : observations) mean += x.rowwise().sum();
    mean /= total;
    channel_var.setZero();
    for (const Mat& x : observations)
      channel_var += (x.colwise() - mean).array().square().matrix().rowwise().sum();
    channel_var /= total;
  }
  model.noise.variances = (0.1 * channel_var.array()).cwiseMax(1e-6).matrix();
  model.validate();
  return model;
}

Mat initial_pseudo_locations(const ExperimentConfig& config, const Lattice& lattice) {
  const long m = lattice.count();
  const long j = config.n_pseudo;
  require(j <= m, ErrorKind::Config,
          "init: pseudo input count exceeds the lattice size");
  Mat z(j, lattice.dim());
  for (long k = 0; k < j; ++k) {
    const long idx = static_cast<long>((static_cast<double>(k) + 0.5) *
                                       static_cast<double>(m) / static_cast<double>(j));
    z.row(k) = lattice.locations.row(std::min(idx, m - 1));
  }
  return z;
}

std::vector<VariationalState> make_initial_states(const ExperimentConfig& config,
                                                  const Lattice& lattice) {
  const int n = config.n_components;
  VariationalState proto;
  proto.factorized = config.factorized;
  proto.pseudo_locations = initial_pseudo_locations(config, lattice);
  for (int jj = 0; jj < config.n_pseudo; ++jj) {
    PseudoFactor f;
    f.w_tilde = Mat::Identity(n, n);
    f.m_tilde = Vec::Zero(n);
    proto.factors.push_back(std::move(f));
  }
  if (!config.is_gp()) {
    proto.tau_posteriors.assign(static_cast<std::size_t>(n),
                                GammaParams{config.nu / 2.0, config.nu / 2.0});
  }
  proto.validate(n);
  return std::vector<VariationalState>(static_cast<std::size_t>(config.sample_count),
                                       proto);
}

void write_dataset(const std::string& dir, const Dataset& dataset,
                   const MixingNetwork& mixing, const ExperimentConfig& config,
                   const std::vector<KernelSpec>& kernels) {
  write_tensor(dir + "/observations.tpnc", Tensor::from_stack(dataset.observations));
  write_tensor(dir + "/components.tpnc", Tensor::from_stack(dataset.components));
  write_tensor(dir + "/taus.tpnc", Tensor::from_matrix(dataset.taus));
  for (std::size_t k = 0; k < mixing.weights.size(); ++k) {
    write_tensor(dir + "/mixing_w" + std::to_string(k) + ".tpnc",
                 Tensor::from_matrix(mixing.weights[k]));
    write_tensor(dir + "/mixing_b" + std::to_string(k) + ".tpnc",
                 Tensor::from_vector(mixing.biases[k]));
  }
  json root = manifest_header("dataset", config);
  json ks = json::array();
  for (const KernelSpec& k : kernels)
    ks.push_back({{"lengthscale", k.lengthscale}, {"variance", k.variance}});
  root["kernels"] = ks;
  root["mixing_layers"] = static_cast<int>(mixing.weights.size());
  root["mixing_leak"] = mixing.leak;
  root["noise_variances"] = vec_to_json(dataset.noise_variances);
  root["signal_variances"] = vec_to_json(dataset.signal_variances);
  write_text(dir + "/manifest.json", root.dump(2) + "\n");
}

LoadedDataset load_dataset(const std::string& dir) {
  json root = load_manifest(dir, "dataset");
  LoadedDataset out;
  out.config = config_from_json_text(root.at("config").dump());
  for (const json& k : root.at("kernels"))
    out.kernels.push_back(
        {k.at("lengthscale").get<double>(), k.at("variance").get<double>()});
  out.data.observations = read_tensor(dir + "/observations.tpnc").to_stack();
  out.data.components = read_tensor(dir + "/components.tpnc").to_stack();
  out.data.taus = read_tensor(dir + "/taus.tpnc").to_matrix();
  out.data.noise_variances = json_to_vec(root.at("noise_variances"));
  out.data.signal_variances = json_to_vec(root.at("signal_variances"));
  const int layers = root.at("mixing_layers").get<int>();
  for (int k = 0; k < layers; ++k) {
    out.mixing.weights.push_back(
        read_tensor(dir + "/mixing_w" + std::to_string(k) + ".tpnc").to_matrix());
    out.mixing.biases.push_back(
        read_tensor(dir + "/mixing_b" + std::to_string(k) + ".tpnc").to_vector());
  }
  out.mixing.leak = root.at("mixing_leak").get<double>();
  return out;
}

void write_checkpoint(const std::string& dir, const TrainerSnapshot& snapshot,
                      const ExperimentConfig& config) {
  fs::create_directories(dir);
  const long s = static_cast<long>(snapshot.variational.size());
  require(s >= 1, ErrorKind::Config, "checkpoint: empty snapshot");
  const long p = snapshot.variational.front().size();

  auto slot_or_zero = [](const AdamSlot& slot, long size) {
    AdamSlot out = slot;
    if (out.m.size() == 0) {
      out.m = Vec::Zero(size);
      out.v = Vec::Zero(size);
    }
    return out;
  };

  write_tensor(dir + "/model.tpnc", Tensor::from_vector(snapshot.model));
  write_tensor(dir + "/pseudo.tpnc", Tensor::from_vector(snapshot.pseudo));
  Mat var(s, p), var_m(s, p), var_v(s, p);
  Vec var_t(s);
  for (long i = 0; i < s; ++i) {
    var.row(i) = snapshot.variational[i].transpose();
    AdamSlot slot = slot_or_zero(snapshot.adam_variational[i], p);
    var_m.row(i) = slot.m.transpose();
    var_v.row(i) = slot.v.transpose();
    var_t[i] = static_cast<double>(slot.t);
  }
  write_tensor(dir + "/variational.tpnc", Tensor::from_matrix(var));
  write_tensor(dir + "/adam_var_m.tpnc", Tensor::from_matrix(var_m));
  write_tensor(dir + "/adam_var_v.tpnc", Tensor::from_matrix(var_v));
  write_tensor(dir + "/adam_var_t.tpnc", Tensor::from_vector(var_t));
  AdamSlot ms = slot_or_zero(snapshot.adam_model, snapshot.model.size());
  write_tensor(dir + "/adam_model_m.tpnc", Tensor::from_vector(ms.m));
  write_tensor(dir + "/adam_model_v.tpnc", Tensor::from_vector(ms.v));
  AdamSlot ps = slot_or_zero(snapshot.adam_pseudo, snapshot.pseudo.size());
  write_tensor(dir + "/adam_pseudo_m.tpnc", Tensor::from_vector(ps.m));
  write_tensor(dir + "/adam_pseudo_v.tpnc", Tensor::from_vector(ps.v));

  json root = manifest_header("checkpoint", config);
  root["next_step"] = snapshot.next_step;
  root["clip_events"] = snapshot.clip_events;
  root["adam_model_t"] = snapshot.adam_model.t;
  root["adam_pseudo_t"] = snapshot.adam_pseudo.t;
  write_text(dir + "/manifest.json", root.dump(2) + "\n");
}

TrainerSnapshot read_checkpoint(const std::string& dir,
                                const ExperimentConfig& expected) {
  json root = load_manifest(dir, "checkpoint");
  ExperimentConfig stored = config_from_json_text(root.at("config").dump());
  require(stored.lattice_shape == expected.lattice_shape &&
              stored.n_components == expected.n_components &&
              stored.n_observed == expected.n_observed &&
              stored.sample_count == expected.sample_count &&
              stored.n_pseudo == expected.n_pseudo &&
              stored.factorized == expected.factorized &&
              stored.model == expected.model &&
              stored.mixing_layers == expected.mixing_layers &&
              stored.learn_kernels == expected.learn_kernels,
          ErrorKind::Config, "checkpoint: stored shape does not match the config");

  TrainerSnapshot snap;
  snap.next_step = root.at("next_step").get<long>();
  snap.clip_events = root.at("clip_events").get<long>();
  snap.model = read_tensor(dir + "/model.tpnc").to_vector();
  snap.pseudo = read_tensor(dir + "/pseudo.tpnc").to_vector();
  Mat var = read_tensor(dir + "/variational.tpnc").to_matrix();
  Mat var_m = read_tensor(dir + "/adam_var_m.tpnc").to_matrix();
  Mat var_v = read_tensor(dir + "/adam_var_v.tpnc").to_matrix();
  Vec var_t = read_tensor(dir + "/adam_var_t.tpnc").to_vector();
  for (long i = 0; i < var.rows(); ++i) {
    snap.variational.push_back(var.row(i).transpose());
    AdamSlot slot;
    slot.m = var_m.row(i).transpose();
    slot.v = var_v.row(i).transpose();
    slot.t = static_cast<long>(var_t[i]);
    snap.adam_variational.push_back(std::move(slot));
  }
  snap.adam_model.m = read_tensor(dir + "/adam_model_m.tpnc").to_vector();
  snap.adam_model.v = read_tensor(dir + "/adam_model_v.tpnc").to_vector();
  snap.adam_model.t = root.at("adam_model_t").get<long>();
  snap.adam_pseudo.m = read_tensor(dir + "/adam_pseudo_m.tpnc").to_vector();
  snap.adam_pseudo.v = read_tensor(dir + "/adam_pseudo_v.tpnc").to_vector();
  snap.adam_pseudo.t = root.at("adam_pseudo_t").get<long>();
  return snap;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::Config, "cannot open for writing: " + path);
  out << "step,epoch,elbo,data_term,kl_u,kl_tau,wallclock_s\n";
  char buf[256];
  for (const TraceRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%d,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.step,
                  r.epoch, r.elbo, r.data_term, r.kl_u, r.kl_tau, r.wallclock_s);
    out << buf;
  }
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Config, "cannot open: " + path);
  std::string line;
  std::getline(in, line);
  require(line == "step,epoch,elbo,data_term,kl_u,kl_tau,wallclock_s",
          ErrorKind::Config, "trace: unexpected header in " + path);
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRow r;
    const int got = std::sscanf(line.c_str(), "%ld,%d,%lf,%lf,%lf,%lf,%lf", &r.step,
                                &r.epoch, &r.elbo, &r.data_term, &r.kl_u, &r.kl_tau,
                                &r.wallclock_s);
    require(got == 7, ErrorKind::Config, "trace: malformed row in " + path);
    rows.push_back(r);
  }
  return rows;
}

void cmd_generate(const ExperimentConfig& config, const std::string& out_dir,
                  bool force) {
  config.validate();
  prepare_dir(out_dir, force);
  Lattice lattice = make_grid(config.lattice_shape);
  std::vector<KernelSpec> kernels =
      resolve_kernels(config.kernel_regime, config.n_components);
  std::vector<double> nus = config.resolved_nus();
  std::vector<TpPrior> priors;
  for (int i = 0; i < config.n_components; ++i)
    priors.push_back({nus[static_cast<std::size_t>(i)], kernels[static_cast<std::size_t>(i)]});
  MixingNetwork net = make_ground_truth_mixing(config.n_components, config.n_observed,
                                               config.mixing_layers, config.seed);
  Dataset ds = generate_dataset(lattice, priors, net, config.noise_fraction,
                                config.sample_count, config.seed);
  write_dataset(out_dir, ds, net, config, kernels);
}

TrainOutputs cmd_train(const ExperimentConfig& config, const std::string& dataset_dir,
                       const std::string& out_dir, const std::string& resume_checkpoint,
                       bool force) {
  config.validate();
  LoadedDataset ds = load_dataset(dataset_dir);
  require(ds.config.lattice_shape == config.lattice_shape, ErrorKind::Config,
          "train: dataset lattice does not match the config");
  require(ds.config.n_observed == config.n_observed, ErrorKind::Config,
          "train: dataset channel count does not match the config");
  require(static_cast<int>(ds.data.observations.size()) == config.sample_count,
          ErrorKind::Config, "train: dataset sample count does not match the config");

  const bool resuming = !resume_checkpoint.empty();
  std::vector<TraceRow> prior_rows;
  TrainerSnapshot resume_snap;
  if (resuming) {
    require(fs::exists(out_dir), ErrorKind::Config,
            "train: resume requires the original output directory");
    resume_snap = read_checkpoint(resume_checkpoint, config);
    if (fs::exists(out_dir + "/elbo_trace.csv")) {
      for (const TraceRow& r : read_trace_csv(out_dir + "/elbo_trace.csv"))
        if (r.step < resume_snap.next_step) prior_rows.push_back(r);
    }
  } else {
    prepare_dir(out_dir, force);
  }

  Lattice lattice = make_grid(config.lattice_shape);
  TpNicaModel init_model = make_initial_model(config, ds.data.observations);
  std::vector<VariationalState> init_states = make_initial_states(config, lattice);

  const std::string ckpt_root = out_dir + "/checkpoints";
  fs::create_directories(ckpt_root);
  CheckpointHook hook = [&](const TrainerSnapshot& snap, long step, int) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%08ld", step);
    write_checkpoint(ckpt_root + "/" + name, snap, config);
  };

  TrainResult result =
      train(init_model, init_states, lattice, ds.data.observations, config.train,
            resuming ? &resume_snap : nullptr, hook);

  std::vector<TraceRow> all_rows = prior_rows;
  all_rows.insert(all_rows.end(), result.trace.begin(), result.trace.end());
  write_trace_csv(out_dir + "/elbo_trace.csv", all_rows);
  write_checkpoint(out_dir + "/final", result.snapshot, config);
  write_text(out_dir + "/resolved_config.json", config_to_json_text(config));
  json root = manifest_header("run", config);
  root["dataset_dir"] = dataset_dir;
  root["total_steps"] = result.snapshot.next_step;
  root["clip_events"] = result.snapshot.clip_events;
  write_text(out_dir + "/manifest.json", root.dump(2) + "\n");
  return TrainOutputs{std::move(result), out_dir};
}

EvalOutputs cmd_evaluate(const std::string& run_dir, const std::string& dataset_dir,
                         const std::string& out_dir, bool force) {
  ExperimentConfig config =
      config_from_json_text(read_text(run_dir + "/resolved_config.json"));
  LoadedDataset ds = load_dataset(dataset_dir);
  require(static_cast<int>(ds.data.components.size()) == config.sample_count,
          ErrorKind::Config, "evaluate: dataset sample count mismatch");
  prepare_dir(out_dir, force);

  Lattice lattice = make_grid(config.lattice_shape);
  TrainerSnapshot snap = read_checkpoint(run_dir + "/final", config);
  TpNicaModel model = make_initial_model(config, ds.data.observations);
  std::vector<VariationalState> states = make_initial_states(config, lattice);
  ParamPacker packer(model, states.front());
  packer.unpack_model(snap.model, &model);
  for (std::size_t s = 0; s < states.size(); ++s) {
    packer.unpack_variational(snap.variational[s], &states[s]);
    packer.unpack_pseudo(snap.pseudo, &states[s]);
  }

  std::vector<Mat> estimated = extract_components(model, states, lattice);
  MccOptions opts;
  opts.per_sample = config.eval.per_sample;
  opts.spearman = config.eval.spearman;
  MccReport report = mean_corr_coeff(estimated, ds.data.components, opts);

  const int n_truth = static_cast<int>(ds.data.components.front().rows());
  IcaResult ica = linear_ica(ds.data.observations, n_truth, config.seed);
  MccReport linear_report = mean_corr_coeff(ica.components, ds.data.components, opts);

  // Evaluation-mode objective (more draws than training for a tighter read).
  double eval_elbo = 0.0;
  for (std::size_t s = 0; s < states.size(); ++s) {
    BaseRandomness rand = make_base_randomness(
        config.eval.n_tau, config.eval.n_draws, static_cast<int>(lattice.count()),
        config.n_components, config.seed,
        static_cast<std::uint64_t>(snap.next_step), static_cast<std::uint64_t>(s));
    eval_elbo +=
        elbo_value(model, states[s], lattice, ds.data.observations[s], rand).value;
  }
  eval_elbo /= static_cast<double>(states.size());

  write_tensor(out_dir + "/components_estimated.tpnc", Tensor::from_stack(estimated));
  {
    std::ofstream csv(out_dir + "/mcc_report.csv", std::ios::trunc);
    csv << "model,layers,kernel_regime,seed,mcc\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%d,%s,%llu,%.10f\n", config.model.c_str(),
                  config.mixing_layers, config.kernel_regime.c_str(),
                  static_cast<unsigned long long>(config.seed), report.mcc);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "linear_ica,%d,%s,%llu,%.10f\n",
                  config.mixing_layers, config.kernel_regime.c_str(),
                  static_cast<unsigned long long>(config.seed), linear_report.mcc);
    csv << buf;
  }

  if (fs::exists(run_dir + "/elbo_trace.csv")) {
    std::vector<TraceRow> rows = read_trace_csv(run_dir + "/elbo_trace.csv");
    SvgSeries curve;
    curve.label = config.model + " objective";
    for (const TraceRow& r : rows) {
      curve.x.push_back(static_cast<double>(r.step));
      curve.y.push_back(r.elbo);
    }
    write_text(out_dir + "/learning_curve.svg",
               line_chart_svg("Training objective", "step", "objective", {curve}));
  }
  {
    SvgSeries model_series, linear_series;
    model_series.label = config.model;
    model_series.markers = true;
    linear_series.label = "linear_ica";
    linear_series.color = "#d1242f";
    linear_series.markers = true;
    for (std::size_t i = 0; i < report.matching.size(); ++i) {
      model_series.x.push_back(static_cast<double>(i));
      model_series.y.push_back(report.abs_correlations(i, report.matching[i]));
      linear_series.x.push_back(static_cast<double>(i));
      linear_series.y.push_back(
          linear_report.abs_correlations(i, linear_report.matching[i]));
    }
    write_text(out_dir + "/mcc_summary.svg",
               line_chart_svg("Matched component correlations", "component",
                              "|correlation|", {model_series, linear_series}));
  }

  json root = manifest_header("evaluation", config);
  root["mcc"] = report.mcc;
  root["mcc_linear_ica"] = linear_report.mcc;
  root["linear_ica_converged"] = ica.converged;
  root["eval_elbo"] = eval_elbo;
  root["run_dir"] = run_dir;
  root["dataset_dir"] = dataset_dir;
  write_text(out_dir + "/manifest.json", root.dump(2) + "\n");

  EvalOutputs out;
  out.mcc_model = report.mcc;
  out.mcc_linear = linear_report.mcc;
  out.linear_converged = ica.converged;
  out.eval_elbo = eval_elbo;
  out.dir = out_dir;
  return out;
}

SweepSpec sweep_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw_config(std::string("sweep: invalid JSON: ") + e.what());
  }
  SweepSpec spec;
  require(root.is_object() && root.contains("base"), ErrorKind::Config,
          "sweep: a 'base' config object is required");
  spec.base = config_from_json_text(root.at("base").dump());
  if (root.contains("layers")) spec.layers = root.at("layers").get<std::vector<int>>();
  if (root.contains("kernel_regimes"))
    spec.regimes = root.at("kernel_regimes").get<std::vector<std::string>>();
  if (root.contains("models"))
    spec.models = root.at("models").get<std::vector<std::string>>();
  if (root.contains("seeds"))
    spec.seeds = root.at("seeds").get<std::vector<std::uint64_t>>();
  if (root.contains("include_linear_ica"))
    spec.include_linear = root.at("include_linear_ica").get<bool>();
  require(!spec.layers.empty() && !spec.regimes.empty() && !spec.models.empty() &&
              !spec.seeds.empty(),
          ErrorKind::Config, "sweep: empty grid axis");
  return spec;
}

SweepSpec load_sweep(const std::string& path) {
  return sweep_from_json_text(read_text(path));
}

std::vector<SweepAggregate> aggregate_sweep(const std::vector<SweepCellResult>& cells) {
  std::map<std::tuple<std::string, int, std::string>, std::vector<double>> groups;
  for (const SweepCellResult& c : cells) {
    if (!c.ok) continue;
    groups[{c.model, c.layers, c.regime}].push_back(c.mcc);
  }
  std::vector<SweepAggregate> out;
  for (const auto& [key, values] : groups) {
    SweepAggregate agg;
    agg.model = std::get<0>(key);
    agg.layers = std::get<1>(key);
    agg.regime = std::get<2>(key);
    agg.n_seeds = static_cast<int>(values.size());
    double mean = 0;
    for (double v : values) mean += v;
    agg.mean_mcc = mean / static_cast<double>(values.size());
    agg.stderr_mcc = sample_stderr(values);
    out.push_back(agg);
  }
  return out;
}

std::vector<SweepCellResult> cmd_sweep(const SweepSpec& spec, const std::string& out_dir,
                                       bool force) {
  spec.base.validate();
  prepare_dir(out_dir, force);
  fs::create_directories(out_dir + "/cells");

  std::vector<SweepCellResult> cells;
  for (const std::string& model : spec.models) {
    for (const std::string& regime : spec.regimes) {
      for (int layers : spec.layers) {
        for (std::uint64_t seed : spec.seeds) {
          ExperimentConfig cfg = spec.base;
          cfg.model = model;
          cfg.kernel_regime = regime;
          cfg.mixing_layers = layers;
          cfg.seed = seed;
          cfg.train.seed = seed;

          char cell_name[96];
          std::snprintf(cell_name, sizeof(cell_name), "%s_%s_l%d_seed%llu",
                        model.c_str(), regime.c_str(), layers,
                        static_cast<unsigned long long>(seed));
          const std::string cell_dir = out_dir + "/cells/" + cell_name;

          SweepCellResult cell;
          cell.model = model;
          cell.layers = layers;
          cell.regime = regime;
          cell.seed = seed;
          try {
            cmd_generate(cfg, cell_dir + "/data", true);
            cmd_train(cfg, cell_dir + "/data", cell_dir + "/run", "", true);
            EvalOutputs ev = cmd_evaluate(cell_dir + "/run", cell_dir + "/data",
                                          cell_dir + "/eval", true);
            cell.mcc = ev.mcc_model;
            cell.ok = true;
            if (spec.include_linear && model == spec.models.front()) {
              SweepCellResult lin = cell;
              lin.model = "linear_ica";
              lin.mcc = ev.mcc_linear;
              cells.push_back(lin);
            }
          } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
          }
          cells.push_back(cell);
        }
      }
    }
  }

  {
    std::ofstream csv(out_dir + "/results.csv", std::ios::trunc);
    csv << "model,layers,kernel_regime,seed,mcc,status,error\n";
    for (const SweepCellResult& c : cells) {
      csv << c.model << "," << c.layers << "," << c.regime << "," << c.seed << ",";
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.10f", c.mcc);
      csv << (c.ok ? buf : "") << "," << (c.ok ? "ok" : "failed") << ",\""
          << c.error << "\"\n";
    }
  }
  std::vector<SweepAggregate> aggs = aggregate_sweep(cells);
  {
    std::ofstream csv(out_dir + "/aggregate.csv", std::ios::trunc);
    csv << "model,layers,kernel_regime,mean_mcc,stderr_mcc,n_seeds\n";
    for (const SweepAggregate& a : aggs) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s,%d,%s,%.10f,%.10f,%d\n", a.model.c_str(),
                    a.layers, a.regime.c_str(), a.mean_mcc, a.stderr_mcc, a.n_seeds);
      csv << buf;
    }
  }
  {
    // Mean MCC against depth, one series per (model, regime).
    std::map<std::pair<std::string, std::string>, SvgSeries> series;
    const std::vector<std::string> palette = {"#1f6feb", "#d1242f", "#2da44e",
                                              "#8250df", "#bf8700", "#57606a"};
    for (const SweepAggregate& a : aggs) {
      auto key = std::make_pair(a.model, a.regime);
      if (series.find(key) == series.end()) {
        SvgSeries s;
        s.label = a.model + " / " + a.regime;
        s.color = palette[series.size() % palette.size()];
        s.markers = true;
        series[key] = s;
      }
    }
    for (auto& [key, s] : series) {
      std::map<int, double> by_layer;
      for (const SweepAggregate& a : aggs)
        if (a.model == key.first && a.regime == key.second) by_layer[a.layers] = a.mean_mcc;
      for (const auto& [layer, mcc] : by_layer) {
        s.x.push_back(layer);
        s.y.push_back(mcc);
      }
    }
    std::vector<SvgSeries> list;
    for (auto& [key, s] : series) list.push_back(s);
    write_text(out_dir + "/mcc_vs_depth.svg",
               line_chart_svg("Identifiability against mixing depth", "mixing layers",
                              "mean MCC", list));
  }
  json root = manifest_header("sweep", spec.base);
  root["layers"] = spec.layers;
  root["kernel_regimes"] = spec.regimes;
  root["models"] = spec.models;
  json seeds = json::array();
  for (std::uint64_t s : spec.seeds) seeds.push_back(s);
  root["seeds"] = seeds;
  int failures = 0;
  for (const SweepCellResult& c : cells)
    if (!c.ok) ++failures;
  root["cells_total"] = static_cast<int>(cells.size());
  root["cells_failed"] = failures;
  write_text(out_dir + "/manifest.json", root.dump(2) + "\n");
  return cells;
}

}  // namespace nica
