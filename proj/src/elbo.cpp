#include "nica/elbo.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "nica/autodiff.hpp"
#include "nica/rng.hpp"
#include "nica/special.hpp"

namespace nica {

namespace {

constexpr double kJitterScale = 1e-6;
constexpr double kLog2Pi = 1.8378770664093454836;

using ad::Var;

Var vsum(const std::vector<Var>& terms) {
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return acc;
}

struct Leaves {
  std::vector<Var> w, b;
  Var lognoise;
  Var logell, logsig2;
  std::vector<Var> factor_raw;
  std::vector<Var> factor_m;
  Var tau_la, tau_lb;
  Var z;
  bool has_tau = false;
  bool learn_kernels = true;
};

Leaves make_leaves(ad::Tape& tape, const TpNicaModel& model,
                   const VariationalState& state) {
  Leaves lv;
  lv.learn_kernels = model.learn_kernels;
  lv.has_tau = !model.gp_limit();
  for (std::size_t k = 0; k < model.decoder.weights.size(); ++k) {
    lv.w.push_back(ad::leaf(tape, model.decoder.weights[k]));
    lv.b.push_back(ad::leaf(tape, model.decoder.biases[k]));
  }
  lv.lognoise = ad::leaf(tape, model.noise.variances.array().log().matrix());

  const long n = model.n_components();
  Mat logell(n, 1), logsig2(n, 1);
  for (long i = 0; i < n; ++i) {
    logell(i, 0) = std::log(model.kernels[i].lengthscale);
    logsig2(i, 0) = std::log(model.kernels[i].variance);
  }
  lv.logell = model.learn_kernels ? ad::leaf(tape, logell) : ad::constant(tape, logell);
  lv.logsig2 = model.learn_kernels ? ad::leaf(tape, logsig2) : ad::constant(tape, logsig2);

  for (const PseudoFactor& f : state.factors) {
    Mat raw = Mat::Zero(n, n);
    if (!state.factorized) {
      raw = f.w_tilde.triangularView<Eigen::StrictlyLower>();
    }
    for (long i = 0; i < n; ++i) raw(i, i) = softplus_inverse(f.w_tilde(i, i));
    lv.factor_raw.push_back(ad::leaf(tape, raw));
    lv.factor_m.push_back(ad::leaf(tape, f.m_tilde));
  }

  if (lv.has_tau) {
    Mat la(n, 1), lb(n, 1);
    for (long i = 0; i < n; ++i) {
      la(i, 0) = std::log(state.tau_posteriors[i].shape);
      lb(i, 0) = std::log(state.tau_posteriors[i].rate);
    }
    lv.tau_la = ad::leaf(tape, la);
    lv.tau_lb = ad::leaf(tape, lb);
  }
  lv.z = ad::leaf(tape, state.pseudo_locations);
  return lv;
}

struct GraphOut {
  Var elbo, data_term, kl_u, kl_tau;
  std::vector<Mat> draws;
  std::vector<Vec> taus;
};

/// Applies the decoder to a draw (m x N) and scores the observations.
Var data_loglik(ad::Tape& tape, const Leaves& lv, Var smat, Var xt, Var inv_var,
                Var noise_const, double leak) {
  Var h = smat;
  const std::size_t layers = lv.w.size();
  for (std::size_t k = 0; k < layers; ++k) {
    h = ad::affine(h, lv.w[k], lv.b[k]);
    if (k + 1 < layers) h = ad::leaky_tanh_op(h, leak);
  }
  Var r = ad::sub(xt, h);
  Var quad = ad::sum(ad::colwise_scale(ad::square(r), inv_var));
  (void)tape;
  return ad::add(ad::scale(quad, -0.5), noise_const);
}

GraphOut build_graph(ad::Tape& tape, Leaves& lv, const TpNicaModel& model,
                     const VariationalState& state, const Lattice& lattice,
                     const Mat& x, const BaseRandomness& rand) {
  const int n = model.n_components();
  const long m = lattice.count();
  const long n_obs = model.n_observed();
  const int n_tau = static_cast<int>(rand.uniforms.rows());
  const int n_draws = static_cast<int>(rand.normals.front().cols());
  const int n_factors = static_cast<int>(state.factors.size());

  GraphOut out;
  Var xt = ad::constant(tape, x.transpose());
  Var one = ad::constant_scalar(tape, 1.0);

  // Kernel scalars and jitter (tied to the largest signal variance).
  std::vector<Var> s2(n), e2(n), kd(n);
  long jit_idx = 0;
  for (int i = 1; i < n; ++i)
    if (model.kernels[i].variance > model.kernels[jit_idx].variance) jit_idx = i;
  for (int i = 0; i < n; ++i) {
    s2[i] = ad::exp_op(ad::element(lv.logsig2, i, 0));
    e2[i] = ad::exp_op(ad::scale(ad::element(lv.logell, i, 0), -2.0));
  }
  Var jit = ad::scale(s2[jit_idx], kJitterScale);
  for (int i = 0; i < n; ++i) kd[i] = ad::add(s2[i], jit);

  // Gram matrices at unit scale.
  Var d_uu = ad::squared_distances_self(lv.z);
  Var d_su = ad::squared_distances_const_rows(lattice.locations, lv.z);
  std::vector<Var> guu(n), gsu(n);
  for (int i = 0; i < n; ++i) {
    Var wexp = ad::scale(e2[i], -0.5);
    guu[i] = ad::add_scaled_identity(
        ad::mul_scalar(ad::exp_op(ad::mul_scalar(d_uu, wexp)), s2[i]), jit);
    gsu[i] = ad::mul_scalar(ad::exp_op(ad::mul_scalar(d_su, wexp)), s2[i]);
  }

  // Scale-variable posteriors.
  std::vector<Var> alpha(n), beta(n);
  Var kl_tau;
  if (lv.has_tau) {
    std::vector<Var> kls;
    for (int i = 0; i < n; ++i) {
      alpha[i] = ad::exp_op(ad::element(lv.tau_la, i, 0));
      beta[i] = ad::exp_op(ad::element(lv.tau_lb, i, 0));
      const double half_nu = 0.5 * model.nus[i];
      const double log_partition_p = std::lgamma(half_nu) - half_nu * std::log(half_nu);
      Var aq = ad::sub(ad::lgamma_op(alpha[i]), ad::cwise_mul(alpha[i], ad::log_op(beta[i])));
      Var g0 = ad::sub(ad::digamma_op(alpha[i]), ad::log_op(beta[i]));
      Var g1 = ad::cwise_mul(alpha[i], ad::recip(beta[i]));
      Var hp = ad::constant_scalar(tape, half_nu);
      Var kl = ad::sub(ad::constant_scalar(tape, log_partition_p), aq);
      kl = ad::sub(kl, ad::cwise_mul(ad::sub(hp, alpha[i]), g0));
      kl = ad::sub(kl, ad::cwise_mul(ad::sub(beta[i], hp), g1));
      kls.push_back(kl);
    }
    kl_tau = vsum(kls);
  } else {
    kl_tau = ad::constant_scalar(tape, 0.0);
  }

  // Variational factors.
  std::vector<Var> factor(n_factors);
  for (int j = 0; j < n_factors; ++j)
    factor[j] = ad::lower_softplus_diag(lv.factor_raw[j], state.factorized);

  Var lam, mvec;
  if (!state.factorized) {
    std::vector<Var> lam_blocks(n_factors);
    for (int j = 0; j < n_factors; ++j)
      lam_blocks[j] = ad::matmul(ad::transpose(factor[j]), factor[j]);
    lam = ad::block_diagonal(lam_blocks);
    mvec = ad::concat_rows(lv.factor_m);
  }

  Var inv_var = ad::exp_op(ad::neg(lv.lognoise));
  Var noise_const =
      ad::add(ad::scale(ad::sum(lv.lognoise), -0.5 * static_cast<double>(m)),
              ad::constant_scalar(tape, -0.5 * static_cast<double>(m) *
                                            static_cast<double>(n_obs) * kLog2Pi));

  std::vector<Var> per_t_terms, data_terms, klu_terms;
  const double leak = model.decoder.leak;

  for (int t = 0; t < n_tau; ++t) {
    // Scale draws for this round.
    std::vector<Var> inv_tau(n);
    Vec tau_values = Vec::Ones(n);
    if (lv.has_tau) {
      for (int i = 0; i < n; ++i) {
        Var tau = ad::gamma_quantile_op(alpha[i], beta[i], rand.uniforms(t, i));
        tau_values[i] = tau.scalar();
        inv_tau[i] = ad::recip(tau);
      }
    }
    out.taus.push_back(tau_values);

    Var data_t, klu_t;
    std::vector<Var> smats;  // one per latent draw, each m x n

    if (!state.factorized) {
      std::vector<Var> kuu(n), ksu(n), kdd(n);
      for (int i = 0; i < n; ++i) {
        if (lv.has_tau) {
          kuu[i] = ad::mul_scalar(guu[i], inv_tau[i]);
          ksu[i] = ad::mul_scalar(gsu[i], inv_tau[i]);
          kdd[i] = ad::mul_scalar(kd[i], inv_tau[i]);
        } else {
          kuu[i] = guu[i];
          ksu[i] = gsu[i];
          kdd[i] = kd[i];
        }
      }
      Var k_uu = ad::interleave_square(kuu);
      Var k_su = ad::interleave_rect(ksu);
      Var kss_vec = ad::repeat_rows(ad::concat_rows(kdd), m);

      Var l = ad::cholesky(k_uu);
      Var bmat = ad::add_scaled_identity(
          ad::matmul(ad::matmul(ad::transpose(l), lam), l), one);
      Var c = ad::cholesky(bmat);
      Var a = ad::matmul(ad::transpose(l), mvec);
      Var w = ad::solve_lower(c, a);
      Var log_z = ad::sub(ad::scale(ad::sumsq(w), 0.5), ad::logdiagsum(c));
      Var g = ad::solve_lower_t(c, w);
      Var h = ad::matmul(l, g);
      Var t0 = ad::solve_lower(l, ad::transpose(k_su));
      Var v = ad::solve_lower(c, t0);
      Var mu = ad::matmul(ad::transpose(t0), g);
      Var sig = ad::block_marginals(t0, v, kss_vec, n);
      Var shat = ad::block_chol_sample(sig, mu, rand.normals[t]);

      Var wm = ad::solve_lower(c, ad::transpose(l));
      Var tr = ad::dot(ad::matmul(wm, lam), wm);
      Var quad = ad::dot(h, ad::matmul(lam, h));
      Var lin = ad::dot(h, mvec);
      klu_t = ad::sub(ad::add(ad::add(ad::scale(tr, -0.5), ad::scale(quad, -0.5)), lin),
                      log_z);

      for (int s = 0; s < n_draws; ++s)
        smats.push_back(ad::reshape_rowmajor(ad::col(shat, s), m, n));
    } else {
      std::vector<Var> klu_parts, shat_i(n);
      for (int i = 0; i < n; ++i) {
        std::vector<Var> lam_entries(n_factors), m_entries(n_factors);
        for (int j = 0; j < n_factors; ++j) {
          lam_entries[j] = ad::square(ad::element(factor[j], i, i));
          m_entries[j] = ad::element(lv.factor_m[j], i, 0);
        }
        Var lam_vec = ad::concat_rows(lam_entries);
        Var lam_i = ad::diag_from_vec(lam_vec);
        Var m_i = ad::concat_rows(m_entries);

        Var kuu_i = lv.has_tau ? ad::mul_scalar(guu[i], inv_tau[i]) : guu[i];
        Var ksu_i = lv.has_tau ? ad::mul_scalar(gsu[i], inv_tau[i]) : gsu[i];
        Var kdd_i = lv.has_tau ? ad::mul_scalar(kd[i], inv_tau[i]) : kd[i];

        Var l = ad::cholesky(kuu_i);
        Var bmat = ad::add_scaled_identity(
            ad::matmul(ad::matmul(ad::transpose(l), lam_i), l), one);
        Var c = ad::cholesky(bmat);
        Var a = ad::matmul(ad::transpose(l), m_i);
        Var w = ad::solve_lower(c, a);
        Var log_z = ad::sub(ad::scale(ad::sumsq(w), 0.5), ad::logdiagsum(c));
        Var g = ad::solve_lower_t(c, w);
        Var h = ad::matmul(l, g);
        Var t0 = ad::solve_lower(l, ad::transpose(ksu_i));
        Var v = ad::solve_lower(c, t0);
        Var mu = ad::matmul(ad::transpose(t0), g);
        Var kss_i = ad::repeat_rows(kdd_i, m);
        Var sig = ad::block_marginals(t0, v, kss_i, 1);

        Mat eps_i(m, n_draws);
        for (long l2 = 0; l2 < m; ++l2)
          eps_i.row(l2) = rand.normals[t].row(l2 * n + i);
        shat_i[i] = ad::block_chol_sample(sig, mu, eps_i);

        Var wm = ad::solve_lower(c, ad::transpose(l));
        Var tr = ad::dot(ad::matmul(wm, lam_i), wm);
        Var quad = ad::dot(h, ad::matmul(lam_i, h));
        Var lin = ad::dot(h, m_i);
        klu_parts.push_back(ad::sub(
            ad::add(ad::add(ad::scale(tr, -0.5), ad::scale(quad, -0.5)), lin), log_z));
      }
      klu_t = vsum(klu_parts);
      for (int s = 0; s < n_draws; ++s) {
        std::vector<Var> cols(n);
        for (int i = 0; i < n; ++i) cols[i] = ad::col(shat_i[i], s);
        smats.push_back(ad::concat_cols(cols));
      }
    }

    std::vector<Var> lls;
    for (int s = 0; s < n_draws; ++s) {
      lls.push_back(data_loglik(tape, lv, smats[s], xt, inv_var, noise_const, leak));
      out.draws.push_back(smats[s].value());
    }
    data_t = ad::scale(vsum(lls), 1.0 / n_draws);

    data_terms.push_back(data_t);
    klu_terms.push_back(klu_t);
    per_t_terms.push_back(ad::sub(data_t, klu_t));
  }

  out.data_term = ad::scale(vsum(data_terms), 1.0 / n_tau);
  out.kl_u = ad::scale(vsum(klu_terms), 1.0 / n_tau);
  out.kl_tau = kl_tau;
  out.elbo = ad::sub(ad::scale(vsum(per_t_terms), 1.0 / n_tau), kl_tau);
  return out;
}

void validate_inputs(const TpNicaModel& model, const VariationalState& state,
                     const Lattice& lattice, const Mat& x,
                     const BaseRandomness& rand) {
  model.validate();
  state.validate(model.n_components());
  require(state.n_pseudo() >= 1, ErrorKind::Config,
          "elbo: at least one pseudo input is required");
  require(state.pseudo_locations.cols() == lattice.dim(), ErrorKind::Config,
          "elbo: pseudo input dimension does not match the lattice");
  require(x.rows() == model.n_observed() && x.cols() == lattice.count(),
          ErrorKind::Config, "elbo: observation matrix shape mismatch");
  require(!model.gp_limit() ==
              (static_cast<int>(state.tau_posteriors.size()) == model.n_components()),
          ErrorKind::Config,
          "elbo: scale posteriors must be present exactly when the model has "
          "finite degrees of freedom");
  require(rand.uniforms.rows() >= 1 &&
              rand.uniforms.cols() == model.n_components(),
          ErrorKind::Config, "elbo: uniform base randomness shape mismatch");
  require(static_cast<long>(rand.normals.size()) == rand.uniforms.rows(),
          ErrorKind::Config,
          "elbo: one normal base matrix is required per scale draw");
  for (const Mat& eps : rand.normals)
    require(eps.rows() == lattice.count() * model.n_components() && eps.cols() >= 1,
            ErrorKind::Config, "elbo: normal base randomness shape mismatch");
}

ElboEstimate make_estimate(const GraphOut& g, int n_tau, int n_draws) {
  ElboEstimate est;
  est.value = g.elbo.scalar();
  est.data_term = g.data_term.scalar();
  est.kl_u = g.kl_u.scalar();
  est.kl_tau = g.kl_tau.scalar();
  est.n_tau = n_tau;
  est.n_draws = n_draws;
  est.component_draws = g.draws;
  est.taus = g.taus;
  const double recon = est.data_term - est.kl_u - est.kl_tau;
  require(std::abs(est.value - recon) <=
              1e-9 * std::max(1.0, std::abs(est.value)),
          ErrorKind::Numerical, "elbo: breakdown does not reproduce the value");
  require(std::isfinite(est.value), ErrorKind::Numerical, "elbo: value is not finite");
  return est;
}

}  // namespace

bool TpNicaModel::gp_limit() const {
  for (double nu : nus)
    if (std::isfinite(nu)) return false;
  return true;
}

void TpNicaModel::validate() const {
  require(!kernels.empty(), ErrorKind::Config, "model: at least one component");
  for (const KernelSpec& k : kernels) k.validate();
  require(nus.size() == kernels.size(), ErrorKind::Config,
          "model: one degrees-of-freedom value per component");
  bool any_finite = false, any_infinite = false;
  for (double nu : nus) {
    require(nu > 0.0, ErrorKind::Config, "model: degrees of freedom must be positive");
    (std::isfinite(nu) ? any_finite : any_infinite) = true;
  }
  require(!(any_finite && any_infinite), ErrorKind::Config,
          "model: mixing finite and infinite degrees of freedom is unsupported");
  decoder.validate();
  require(decoder.weights.front().cols() == n_components(), ErrorKind::Config,
          "model: decoder input width must equal the component count");
  require(noise.variances.size() == decoder.weights.back().rows(), ErrorKind::Config,
          "model: one noise variance per observed channel");
  for (long c = 0; c < noise.variances.size(); ++c)
    require(noise.variances[c] > 0.0, ErrorKind::Config,
            "model: noise variances must be positive");
}

BaseRandomness make_base_randomness(int n_tau, int n_draws, int n_locations,
                                    int n_components, std::uint64_t seed,
                                    std::uint64_t step, std::uint64_t sample_index) {
  require(n_tau >= 1 && n_draws >= 1, ErrorKind::Config,
          "elbo: draw counts must be at least one");
  BaseRandomness rand;
  Rng u = make_stream(seed, StreamTag::ElboUniform, step, sample_index);
  rand.uniforms.resize(n_tau, n_components);
  for (int t = 0; t < n_tau; ++t)
    for (int i = 0; i < n_components; ++i) rand.uniforms(t, i) = u.uniform();
  Rng g = make_stream(seed, StreamTag::ElboNormal, step, sample_index);
  for (int t = 0; t < n_tau; ++t) {
    Mat eps(static_cast<long>(n_locations) * n_components, n_draws);
    for (long r = 0; r < eps.rows(); ++r)
      for (int s = 0; s < n_draws; ++s) eps(r, s) = g.normal();
    rand.normals.push_back(std::move(eps));
  }
  return rand;
}

ElboEstimate elbo_value(const TpNicaModel& model, const VariationalState& state,
                        const Lattice& lattice, const Mat& x,
                        const BaseRandomness& randomness) {
  validate_inputs(model, state, lattice, x, randomness);
  ad::Tape tape;
  Leaves lv = make_leaves(tape, model, state);
  GraphOut g = build_graph(tape, lv, model, state, lattice, x, randomness);
  return make_estimate(g, static_cast<int>(randomness.uniforms.rows()),
                       static_cast<int>(randomness.normals.front().cols()));
}

ElboGradient elbo_gradient(const TpNicaModel& model, const VariationalState& state,
                           const Lattice& lattice, const Mat& x,
                           const BaseRandomness& randomness) {
  validate_inputs(model, state, lattice, x, randomness);
  ad::Tape tape;
  Leaves lv = make_leaves(tape, model, state);
  GraphOut g = build_graph(tape, lv, model, state, lattice, x, randomness);

  ElboGradient result;
  result.estimate = make_estimate(g, static_cast<int>(randomness.uniforms.rows()),
                                  static_cast<int>(randomness.normals.front().cols()));
  tape.backward(g.elbo.id);

  ParamPacker packer(model, state);
  result.model.resize(packer.model_size());
  result.variational.resize(packer.variational_size());
  result.pseudo.resize(packer.pseudo_size());

  const long n = model.n_components();
  long at = 0;
  for (std::size_t k = 0; k < lv.w.size(); ++k) {
    Mat gw = tape.gradient(lv.w[k].id);
    for (long r = 0; r < gw.rows(); ++r)
      for (long c = 0; c < gw.cols(); ++c) result.model[at++] = gw(r, c);
    Mat gb = tape.gradient(lv.b[k].id);
    for (long r = 0; r < gb.rows(); ++r) result.model[at++] = gb(r, 0);
  }
  {
    Mat gn = tape.gradient(lv.lognoise.id);
    for (long r = 0; r < gn.rows(); ++r) result.model[at++] = gn(r, 0);
  }
  if (model.learn_kernels) {
    Mat ge = tape.gradient(lv.logell.id);
    for (long r = 0; r < n; ++r) result.model[at++] = ge(r, 0);
    Mat gs = tape.gradient(lv.logsig2.id);
    for (long r = 0; r < n; ++r) result.model[at++] = gs(r, 0);
  }
  require(at == packer.model_size(), ErrorKind::Numerical,
          "elbo: model gradient layout mismatch");

  at = 0;
  for (std::size_t j = 0; j < lv.factor_raw.size(); ++j) {
    Mat gf = tape.gradient(lv.factor_raw[j].id);
    if (state.factorized) {
      for (long i = 0; i < n; ++i) result.variational[at++] = gf(i, i);
    } else {
      for (long r = 0; r < n; ++r)
        for (long c = 0; c <= r; ++c) result.variational[at++] = gf(r, c);
    }
  }
  for (std::size_t j = 0; j < lv.factor_m.size(); ++j) {
    Mat gm = tape.gradient(lv.factor_m[j].id);
    for (long r = 0; r < n; ++r) result.variational[at++] = gm(r, 0);
  }
  if (lv.has_tau) {
    Mat ga = tape.gradient(lv.tau_la.id);
    for (long r = 0; r < n; ++r) result.variational[at++] = ga(r, 0);
    Mat gb2 = tape.gradient(lv.tau_lb.id);
    for (long r = 0; r < n; ++r) result.variational[at++] = gb2(r, 0);
  }
  require(at == packer.variational_size(), ErrorKind::Numerical,
          "elbo: variational gradient layout mismatch");

  at = 0;
  Mat gz = tape.gradient(lv.z.id);
  for (long r = 0; r < gz.rows(); ++r)
    for (long c = 0; c < gz.cols(); ++c) result.pseudo[at++] = gz(r, c);
  require(at == packer.pseudo_size(), ErrorKind::Numerical,
          "elbo: pseudo gradient layout mismatch");

  for (const ParamBlock& block : packer.blocks()) {
    const Vec& vec = block.group == 0   ? result.model
                     : block.group == 1 ? result.variational
                                        : result.pseudo;
    for (long i = 0; i < block.size; ++i) {
      if (!std::isfinite(vec[block.offset + i])) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "elbo: gradient for block '%s' is not finite", block.name.c_str());
        throw_numerical(buf);
      }
    }
  }
  return result;
}

ParamPacker::ParamPacker(const TpNicaModel& model, const VariationalState& state) {
  for (std::size_t k = 0; k < model.decoder.weights.size(); ++k)
    layer_shapes_.push_back({model.decoder.weights[k].rows(),
                             model.decoder.weights[k].cols()});
  n_observed_ = model.n_observed();
  n_components_ = model.n_components();
  n_factors_ = static_cast<long>(state.factors.size());
  n_pseudo_ = state.pseudo_locations.rows();
  dim_ = state.pseudo_locations.cols();
  factorized_ = state.factorized;
  learn_kernels_ = model.learn_kernels;
  has_tau_ = !model.gp_limit();

  long at = 0;
  for (std::size_t k = 0; k < layer_shapes_.size(); ++k) {
    long wsize = layer_shapes_[k].first * layer_shapes_[k].second;
    blocks_.push_back({"decoder_w" + std::to_string(k), 0, at, wsize});
    at += wsize;
    blocks_.push_back({"decoder_b" + std::to_string(k), 0, at, layer_shapes_[k].first});
    at += layer_shapes_[k].first;
  }
  blocks_.push_back({"noise_logvar", 0, at, n_observed_});
  at += n_observed_;
  if (learn_kernels_) {
    blocks_.push_back({"kernel_log_lengthscale", 0, at, n_components_});
    at += n_components_;
    blocks_.push_back({"kernel_log_variance", 0, at, n_components_});
    at += n_components_;
  }
  model_size_ = at;

  at = 0;
  const long per_factor =
      factorized_ ? n_components_ : n_components_ * (n_components_ + 1) / 2;
  blocks_.push_back({"factor_w", 1, at, n_factors_ * per_factor});
  at += n_factors_ * per_factor;
  blocks_.push_back({"factor_m", 1, at, n_factors_ * n_components_});
  at += n_factors_ * n_components_;
  if (has_tau_) {
    blocks_.push_back({"tau_log_shape", 1, at, n_components_});
    at += n_components_;
    blocks_.push_back({"tau_log_rate", 1, at, n_components_});
    at += n_components_;
  }
  variational_size_ = at;

  blocks_.push_back({"pseudo_locations", 2, 0, n_pseudo_ * dim_});
  pseudo_size_ = n_pseudo_ * dim_;
}

Vec ParamPacker::pack_model(const TpNicaModel& model) const {
  Vec out(model_size_);
  long at = 0;
  for (std::size_t k = 0; k < layer_shapes_.size(); ++k) {
    const Mat& w = model.decoder.weights[k];
    for (long r = 0; r < w.rows(); ++r)
      for (long c = 0; c < w.cols(); ++c) out[at++] = w(r, c);
    const Vec& b = model.decoder.biases[k];
    for (long r = 0; r < b.size(); ++r) out[at++] = b[r];
  }
  for (long c = 0; c < n_observed_; ++c) out[at++] = std::log(model.noise.variances[c]);
  if (learn_kernels_) {
    for (long i = 0; i < n_components_; ++i)
      out[at++] = std::log(model.kernels[i].lengthscale);
    for (long i = 0; i < n_components_; ++i)
      out[at++] = std::log(model.kernels[i].variance);
  }
  require(at == model_size_, ErrorKind::Config, "packer: model layout mismatch");
  return out;
}

void ParamPacker::unpack_model(const Vec& packed, TpNicaModel* model) const {
  require(packed.size() == model_size_, ErrorKind::Config,
          "packer: packed model size mismatch");
  long at = 0;
  for (std::size_t k = 0; k < layer_shapes_.size(); ++k) {
    Mat& w = model->decoder.weights[k];
    for (long r = 0; r < w.rows(); ++r)
      for (long c = 0; c < w.cols(); ++c) w(r, c) = packed[at++];
    Vec& b = model->decoder.biases[k];
    for (long r = 0; r < b.size(); ++r) b[r] = packed[at++];
  }
  for (long c = 0; c < n_observed_; ++c)
    model->noise.variances[c] = std::exp(packed[at++]);
  if (learn_kernels_) {
    for (long i = 0; i < n_components_; ++i)
      model->kernels[i].lengthscale = std::exp(packed[at++]);
    for (long i = 0; i < n_components_; ++i)
      model->kernels[i].variance = std::exp(packed[at++]);
  }
}

Vec ParamPacker::pack_variational(const VariationalState& state) const {
  require(static_cast<long>(state.factors.size()) == n_factors_ &&
              (!has_tau_ ||
               static_cast<long>(state.tau_posteriors.size()) == n_components_),
          ErrorKind::Config, "packer: state does not match the packed layout");
  Vec out(variational_size_);
  long at = 0;
  for (long j = 0; j < n_factors_; ++j) {
    const Mat& w = state.factors[j].w_tilde;
    if (factorized_) {
      for (long i = 0; i < n_components_; ++i) out[at++] = softplus_inverse(w(i, i));
    } else {
      for (long r = 0; r < n_components_; ++r)
        for (long c = 0; c <= r; ++c)
          out[at++] = (r == c) ? softplus_inverse(w(r, c)) : w(r, c);
    }
  }
  for (long j = 0; j < n_factors_; ++j)
    for (long i = 0; i < n_components_; ++i) out[at++] = state.factors[j].m_tilde[i];
  if (has_tau_) {
    for (long i = 0; i < n_components_; ++i)
      out[at++] = std::log(state.tau_posteriors[i].shape);
    for (long i = 0; i < n_components_; ++i)
      out[at++] = std::log(state.tau_posteriors[i].rate);
  }
  require(at == variational_size_, ErrorKind::Config,
          "packer: variational layout mismatch");
  return out;
}

void ParamPacker::unpack_variational(const Vec& packed, VariationalState* state) const {
  require(packed.size() == variational_size_, ErrorKind::Config,
          "packer: packed variational size mismatch");
  require(static_cast<long>(state->factors.size()) == n_factors_ &&
              (!has_tau_ ||
               static_cast<long>(state->tau_posteriors.size()) == n_components_),
          ErrorKind::Config, "packer: state does not match the packed layout");
  long at = 0;
  for (long j = 0; j < n_factors_; ++j) {
    Mat& w = state->factors[j].w_tilde;
    w.setZero();
    if (factorized_) {
      for (long i = 0; i < n_components_; ++i) w(i, i) = softplus(packed[at++]);
    } else {
      for (long r = 0; r < n_components_; ++r)
        for (long c = 0; c <= r; ++c) {
          w(r, c) = (r == c) ? softplus(packed[at]) : packed[at];
          ++at;
        }
    }
  }
  for (long j = 0; j < n_factors_; ++j)
    for (long i = 0; i < n_components_; ++i) state->factors[j].m_tilde[i] = packed[at++];
  if (has_tau_) {
    for (long i = 0; i < n_components_; ++i)
      state->tau_posteriors[i].shape = std::exp(packed[at++]);
    for (long i = 0; i < n_components_; ++i)
      state->tau_posteriors[i].rate = std::exp(packed[at++]);
  }
}

Vec ParamPacker::pack_pseudo(const VariationalState& state) const {
  Vec out(pseudo_size_);
  long at = 0;
  for (long r = 0; r < n_pseudo_; ++r)
    for (long c = 0; c < dim_; ++c) out[at++] = state.pseudo_locations(r, c);
  return out;
}

void ParamPacker::unpack_pseudo(const Vec& packed, VariationalState* state) const {
  require(packed.size() == pseudo_size_, ErrorKind::Config,
          "packer: packed pseudo size mismatch");
  require(state->pseudo_locations.rows() == n_pseudo_ &&
              state->pseudo_locations.cols() == dim_,
          ErrorKind::Config, "packer: state does not match the packed layout");
  long at = 0;
  for (long r = 0; r < n_pseudo_; ++r)
    for (long c = 0; c < dim_; ++c) state->pseudo_locations(r, c) = packed[at++];
}

}  // namespace nica
