#pragma once

#include <functional>
#include <vector>

#include "nica/common.hpp"

namespace nica::ad {

/// Reverse-mode tape over dense matrix values.  Forward values are computed
/// eagerly as ops are recorded; backward() walks the recorded nodes in
/// reverse.  Scalars travel as 1x1 matrices.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  int add_node(Mat value, bool requires_grad, BackwardFn backward);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Adds `delta` to the adjoint of `id` (no-op for non-differentiable nodes).
  void accumulate(int id, const Mat& delta);
  bool has_adjoint(int id) const { return nodes_[id].has_adj; }
  const Mat& adjoint(int id) const { return nodes_[id].adj; }

  /// Seeds the (scalar) root with 1 and propagates adjoints to the leaves.
  void backward(int root);

  /// Gradient of the last backward() root w.r.t. node `id`; zeros if the
  /// node was never reached.
  Mat gradient(int id) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat adj;
    bool has_adj = false;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const { return tape->value(id); }
  double scalar() const { return value()(0, 0); }
  long rows() const { return value().rows(); }
  long cols() const { return value().cols(); }
};

Var constant(Tape& t, Mat v);
Var constant_scalar(Tape& t, double v);
Var leaf(Tape& t, Mat v);

// Arithmetic / elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var cwise_mul(Var a, Var b);
Var mul_scalar(Var a, Var s);  // s is 1x1
Var recip(Var a);
Var exp_op(Var a);
Var log_op(Var a);
Var square(Var a);
Var softplus_op(Var a);
Var leaky_tanh_op(Var a, double leak);
Var lgamma_op(Var a);
Var digamma_op(Var a);
/// Maps a raw square matrix to a valid triangular factor: softplus on the
/// diagonal, strict lower triangle passed through (dropped entirely when
/// `diagonal_only`), upper triangle zeroed.
Var lower_softplus_diag(Var a, bool diagonal_only);

// Structure.
Var transpose(Var a);
Var element(Var a, long r, long c);      // 1x1 pick
Var col(Var a, long c);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var block_diagonal(const std::vector<Var>& blocks);
Var diag_from_vec(Var v);
Var reshape_rowmajor(Var v, long rows, long cols);
Var repeat_rows(Var v, long times);  // tiles a column vector
/// out[q*n + i, q2*n + i] = comps[i](q, q2): interleaves per-component square
/// Gram matrices into the location-major joint layout.
Var interleave_square(const std::vector<Var>& comps);
/// Rectangular variant: out[l*n + i, q*n + i] = comps[i](l, q).
Var interleave_rect(const std::vector<Var>& comps);

// Reductions.
Var sum(Var a);
Var sumsq(Var a);
Var dot(Var a, Var b);  // sum of elementwise product, any equal shapes

// Linear algebra.
Var matmul(Var a, Var b);
Var affine(Var h, Var w, Var b);  // h * w' + ones * b'
Var colwise_scale(Var a, Var s);  // scales column c by s(c)
Var add_scaled_identity(Var a, Var s);
Var cholesky(Var a);
Var solve_lower(Var l, Var b);    // l^{-1} b
Var solve_lower_t(Var l, Var b);  // l^{-T} b
Var logdiagsum(Var l);

// Distances between row sets (second factor fixed / both differentiable).
Var squared_distances_const_rows(const Mat& x, Var z);
Var squared_distances_self(Var z);

/// Per-location marginal covariance blocks: inputs t0 and v are (J*n) x (m*n)
/// with location-major columns, kss_diag is (m*n) x 1.  Output stacks the m
/// N x N blocks vertically: rows l*n..l*n+n-1 hold block l.
Var block_marginals(Var t0, Var v, Var kss_diag, int n);

/// Location-wise reparameterized draws: for each location block, factor the
/// covariance and emit mean + L * eps.  sigma_packed is (m*n) x n, mu is
/// (m*n) x 1, eps is a constant (m*n) x n_draws matrix.
Var block_chol_sample(Var sigma_packed, Var mu, const Mat& eps);

/// Gamma(shape, rate) quantile at fixed base uniform u, differentiable in
/// both parameters through the implicit-function theorem.
Var gamma_quantile_op(Var shape, Var rate, double u);

/// Finite-difference gradient of a scalar function, used by tests as the
/// arbiter for every backward rule.
Vec finite_difference(const std::function<double(const Vec&)>& f, const Vec& x,
                      double step = 1e-5);

}  // namespace nica::ad
