#include "nica/autodiff.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdio>
#include <utility>

#include "nica/special.hpp"

namespace nica::ad {

namespace {

void check_same_tape(Var a, Var b) {
  require(a.tape == b.tape, ErrorKind::Config,
          "autodiff: operands recorded on different tapes");
}

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "autodiff: %s shape mismatch (%ldx%ld vs %ldx%ld)",
                  op, a.rows(), a.cols(), b.rows(), b.cols());
    throw_config(buf);
  }
}

void check_scalar(Var s, const char* op) {
  require(s.rows() == 1 && s.cols() == 1, ErrorKind::Config,
          std::string("autodiff: ") + op + " expects a 1x1 operand");
}

/// Lower triangle with halved diagonal; the projection used by the Cholesky
/// reverse rule.
Mat phi(const Mat& a) {
  Mat out = a.triangularView<Eigen::StrictlyLower>();
  out.diagonal() = 0.5 * a.diagonal();
  return out;
}

/// Reverse rule for L = chol(A): given adjoint of L (only its lower triangle
/// is meaningful), returns the raw adjoint of A.
Mat cholesky_backward(const Mat& l, const Mat& lbar_in) {
  Mat lbar = lbar_in.triangularView<Eigen::Lower>();
  Mat p = phi(l.transpose() * lbar);
  // A_bar = L^{-T} P L^{-1}, computed with two triangular solves.
  Mat tmp = l.transpose().triangularView<Eigen::Upper>().solve(p);
  Mat abar = l.transpose().triangularView<Eigen::Upper>().solve(tmp.transpose()).transpose();
  return abar;
}

Mat chol_lower_or_throw(const Mat& a, const char* what) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "autodiff: Cholesky failed in %s (size %ld, min diag %.3e)", what,
                  a.rows(), a.rows() > 0 ? a.diagonal().minCoeff() : 0.0);
    throw_numerical(buf);
  }
  return llt.matrixL();
}

}  // namespace

int Tape::add_node(Mat value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int id, const Mat& delta) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return;
  if (!node.has_adj) {
    node.adj = delta;
    node.has_adj = true;
  } else {
    node.adj += delta;
  }
}

void Tape::backward(int root) {
  require(root >= 0 && root < static_cast<int>(nodes_.size()), ErrorKind::Config,
          "autodiff: backward root out of range");
  require(nodes_[root].value.size() == 1, ErrorKind::Config,
          "autodiff: backward root must be scalar");
  accumulate(root, Mat::Ones(1, 1));
  for (int id = root; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.has_adj && node.backward) node.backward(*this, id);
  }
}

Mat Tape::gradient(int id) const {
  const Node& node = nodes_[id];
  if (node.has_adj) return node.adj;
  return Mat::Zero(node.value.rows(), node.value.cols());
}

Var constant(Tape& t, Mat v) {
  return Var{&t, t.add_node(std::move(v), false, nullptr)};
}

Var constant_scalar(Tape& t, double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(t, m);
}

Var leaf(Tape& t, Mat v) {
  return Var{&t, t.add_node(std::move(v), true, nullptr)};
}

namespace {

/// Records a unary/binary/nary op whose gradient flows only when at least one
/// input is differentiable.
Var record(Tape& t, Mat value, std::vector<int> inputs, Tape::BackwardFn fn) {
  bool grad = false;
  for (int id : inputs) grad = grad || t.requires_grad(id);
  return Var{&t, t.add_node(std::move(value), grad, grad ? std::move(fn) : nullptr)};
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "add");
  int ia = a.id, ib = b.id;
  return record(*a.tape, a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, t.adjoint(self));
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "sub");
  int ia = a.id, ib = b.id;
  return record(*a.tape, a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, -t.adjoint(self));
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  int ia = a.id;
  return record(*a.tape, c * a.value(), {ia}, [ia, c](Tape& t, int self) {
    t.accumulate(ia, c * t.adjoint(self));
  });
}

Var cwise_mul(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "cwise_mul");
  int ia = a.id, ib = b.id;
  return record(*a.tape, a.value().cwiseProduct(b.value()), {ia, ib},
                [ia, ib](Tape& t, int self) {
                  t.accumulate(ia, t.adjoint(self).cwiseProduct(t.value(ib)));
                  t.accumulate(ib, t.adjoint(self).cwiseProduct(t.value(ia)));
                });
}

Var mul_scalar(Var a, Var s) {
  check_same_tape(a, s);
  check_scalar(s, "mul_scalar");
  int ia = a.id, is = s.id;
  return record(*a.tape, s.scalar() * a.value(), {ia, is}, [ia, is](Tape& t, int self) {
    t.accumulate(ia, t.value(is)(0, 0) * t.adjoint(self));
    Mat ds(1, 1);
    ds(0, 0) = t.adjoint(self).cwiseProduct(t.value(ia)).sum();
    t.accumulate(is, ds);
  });
}

Var recip(Var a) {
  int ia = a.id;
  return record(*a.tape, a.value().cwiseInverse(), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate(ia, -t.adjoint(self).cwiseProduct(y).cwiseProduct(y));
  });
}

Var exp_op(Var a) {
  int ia = a.id;
  return record(*a.tape, a.value().array().exp().matrix(), {ia}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self).cwiseProduct(t.value(self)));
  });
}

Var log_op(Var a) {
  int ia = a.id;
  return record(*a.tape, a.value().array().log().matrix(), {ia}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self).cwiseQuotient(t.value(ia)));
  });
}

Var square(Var a) {
  int ia = a.id;
  return record(*a.tape, a.value().cwiseProduct(a.value()), {ia}, [ia](Tape& t, int self) {
    t.accumulate(ia, 2.0 * t.adjoint(self).cwiseProduct(t.value(ia)));
  });
}

Var softplus_op(Var a) {
  int ia = a.id;
  Mat y = a.value().unaryExpr([](double x) { return softplus(x); });
  return record(*a.tape, std::move(y), {ia}, [ia](Tape& t, int self) {
    Mat sig = t.value(ia).unaryExpr(
        [](double x) { return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
    t.accumulate(ia, t.adjoint(self).cwiseProduct(sig));
  });
}

Var leaky_tanh_op(Var a, double leak) {
  int ia = a.id;
  Mat y = a.value().unaryExpr([leak](double x) { return leak * x + (1.0 - leak) * std::tanh(x); });
  return record(*a.tape, std::move(y), {ia}, [ia, leak](Tape& t, int self) {
    Mat d = t.value(ia).unaryExpr([leak](double x) {
      double th = std::tanh(x);
      return leak + (1.0 - leak) * (1.0 - th * th);
    });
    t.accumulate(ia, t.adjoint(self).cwiseProduct(d));
  });
}

Var lgamma_op(Var a) {
  int ia = a.id;
  Mat y = a.value().unaryExpr([](double x) { return std::lgamma(x); });
  return record(*a.tape, std::move(y), {ia}, [ia](Tape& t, int self) {
    Mat d = t.value(ia).unaryExpr([](double x) { return digamma(x); });
    t.accumulate(ia, t.adjoint(self).cwiseProduct(d));
  });
}

Var digamma_op(Var a) {
  int ia = a.id;
  Mat y = a.value().unaryExpr([](double x) { return digamma(x); });
  return record(*a.tape, std::move(y), {ia}, [ia](Tape& t, int self) {
    Mat d = t.value(ia).unaryExpr([](double x) { return trigamma(x); });
    t.accumulate(ia, t.adjoint(self).cwiseProduct(d));
  });
}

Var lower_softplus_diag(Var a, bool diagonal_only) {
  require(a.rows() == a.cols(), ErrorKind::Config,
          "autodiff: lower_softplus_diag expects a square matrix");
  int ia = a.id;
  Mat y;
  if (diagonal_only) {
    y = Mat::Zero(a.rows(), a.cols());
  } else {
    y = a.value().triangularView<Eigen::StrictlyLower>();
  }
  y.diagonal() = a.value().diagonal().unaryExpr([](double x) { return softplus(x); });
  return record(*a.tape, std::move(y), {ia}, [ia, diagonal_only](Tape& t, int self) {
    const Mat& adj = t.adjoint(self);
    Mat d;
    if (diagonal_only) {
      d = Mat::Zero(adj.rows(), adj.cols());
    } else {
      d = adj.triangularView<Eigen::StrictlyLower>();
    }
    Mat sig = t.value(ia).diagonal().unaryExpr([](double x) {
      return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    d.diagonal() = adj.diagonal().cwiseProduct(sig);
    t.accumulate(ia, d);
  });
}

Var transpose(Var a) {
  int ia = a.id;
  return record(*a.tape, a.value().transpose(), {ia}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self).transpose());
  });
}

Var element(Var a, long r, long c) {
  require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), ErrorKind::Config,
          "autodiff: element index out of range");
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = a.value()(r, c);
  return record(*a.tape, std::move(y), {ia}, [ia, r, c](Tape& t, int self) {
    Mat d = Mat::Zero(t.value(ia).rows(), t.value(ia).cols());
    d(r, c) = t.adjoint(self)(0, 0);
    t.accumulate(ia, d);
  });
}

Var col(Var a, long c) {
  require(c >= 0 && c < a.cols(), ErrorKind::Config, "autodiff: column index out of range");
  int ia = a.id;
  return record(*a.tape, a.value().col(c), {ia}, [ia, c](Tape& t, int self) {
    Mat d = Mat::Zero(t.value(ia).rows(), t.value(ia).cols());
    d.col(c) = t.adjoint(self);
    t.accumulate(ia, d);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::Config, "autodiff: concat_rows of nothing");
  Tape& t = *parts.front().tape;
  long cols = parts.front().cols();
  long rows = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    require(p.cols() == cols, ErrorKind::Config, "autodiff: concat_rows column mismatch");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Mat y(rows, cols);
  long at = 0;
  for (Var p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return record(t, std::move(y), ids, [ids](Tape& tt, int self) {
    long at = 0;
    for (int id : ids) {
      long r = tt.value(id).rows();
      tt.accumulate(id, tt.adjoint(self).middleRows(at, r));
      at += r;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::Config, "autodiff: concat_cols of nothing");
  Tape& t = *parts.front().tape;
  long rows = parts.front().rows();
  long cols = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    require(p.rows() == rows, ErrorKind::Config, "autodiff: concat_cols row mismatch");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Mat y(rows, cols);
  long at = 0;
  for (Var p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return record(t, std::move(y), ids, [ids](Tape& tt, int self) {
    long at = 0;
    for (int id : ids) {
      long c = tt.value(id).cols();
      tt.accumulate(id, tt.adjoint(self).middleCols(at, c));
      at += c;
    }
  });
}

Var block_diagonal(const std::vector<Var>& blocks) {
  require(!blocks.empty(), ErrorKind::Config, "autodiff: block_diagonal of nothing");
  Tape& t = *blocks.front().tape;
  long rows = 0, cols = 0;
  std::vector<int> ids;
  for (Var b : blocks) {
    rows += b.rows();
    cols += b.cols();
    ids.push_back(b.id);
  }
  Mat y = Mat::Zero(rows, cols);
  long ar = 0, ac = 0;
  for (Var b : blocks) {
    y.block(ar, ac, b.rows(), b.cols()) = b.value();
    ar += b.rows();
    ac += b.cols();
  }
  return record(t, std::move(y), ids, [ids](Tape& tt, int self) {
    long ar = 0, ac = 0;
    for (int id : ids) {
      long r = tt.value(id).rows(), c = tt.value(id).cols();
      tt.accumulate(id, tt.adjoint(self).block(ar, ac, r, c));
      ar += r;
      ac += c;
    }
  });
}

Var diag_from_vec(Var v) {
  require(v.cols() == 1, ErrorKind::Config, "autodiff: diag_from_vec expects a column");
  int iv = v.id;
  Mat y = Mat::Zero(v.rows(), v.rows());
  y.diagonal() = v.value().col(0);
  return record(*v.tape, std::move(y), {iv}, [iv](Tape& t, int self) {
    t.accumulate(iv, t.adjoint(self).diagonal());
  });
}

Var reshape_rowmajor(Var v, long rows, long cols) {
  require(v.cols() == 1 && v.rows() == rows * cols, ErrorKind::Config,
          "autodiff: reshape_rowmajor size mismatch");
  int iv = v.id;
  Mat y(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) y(r, c) = v.value()(r * cols + c, 0);
  return record(*v.tape, std::move(y), {iv}, [iv, rows, cols](Tape& t, int self) {
    Mat d(rows * cols, 1);
    const Mat& a = t.adjoint(self);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) d(r * cols + c, 0) = a(r, c);
    t.accumulate(iv, d);
  });
}

Var repeat_rows(Var v, long times) {
  require(v.cols() == 1, ErrorKind::Config, "autodiff: repeat_rows expects a column");
  int iv = v.id;
  long n = v.rows();
  Mat y(n * times, 1);
  for (long k = 0; k < times; ++k) y.middleRows(k * n, n) = v.value();
  return record(*v.tape, std::move(y), {iv}, [iv, n, times](Tape& t, int self) {
    Mat d = Mat::Zero(n, 1);
    for (long k = 0; k < times; ++k) d += t.adjoint(self).middleRows(k * n, n);
    t.accumulate(iv, d);
  });
}

Var interleave_square(const std::vector<Var>& comps) {
  require(!comps.empty(), ErrorKind::Config, "autodiff: interleave_square of nothing");
  Tape& t = *comps.front().tape;
  long q = comps.front().rows();
  long n = static_cast<long>(comps.size());
  std::vector<int> ids;
  for (Var c : comps) {
    require(c.rows() == q && c.cols() == q, ErrorKind::Config,
            "autodiff: interleave_square expects equal square blocks");
    ids.push_back(c.id);
  }
  Mat y = Mat::Zero(q * n, q * n);
  for (long i = 0; i < n; ++i)
    for (long a = 0; a < q; ++a)
      for (long b = 0; b < q; ++b) y(a * n + i, b * n + i) = comps[i].value()(a, b);
  return record(t, std::move(y), ids, [ids, q, n](Tape& tt, int self) {
    const Mat& adj = tt.adjoint(self);
    for (long i = 0; i < n; ++i) {
      Mat d(q, q);
      for (long a = 0; a < q; ++a)
        for (long b = 0; b < q; ++b) d(a, b) = adj(a * n + i, b * n + i);
      tt.accumulate(ids[i], d);
    }
  });
}

Var interleave_rect(const std::vector<Var>& comps) {
  require(!comps.empty(), ErrorKind::Config, "autodiff: interleave_rect of nothing");
  Tape& t = *comps.front().tape;
  long m = comps.front().rows();
  long q = comps.front().cols();
  long n = static_cast<long>(comps.size());
  std::vector<int> ids;
  for (Var c : comps) {
    require(c.rows() == m && c.cols() == q, ErrorKind::Config,
            "autodiff: interleave_rect expects equal blocks");
    ids.push_back(c.id);
  }
  Mat y = Mat::Zero(m * n, q * n);
  for (long i = 0; i < n; ++i)
    for (long l = 0; l < m; ++l)
      for (long b = 0; b < q; ++b) y(l * n + i, b * n + i) = comps[i].value()(l, b);
  return record(t, std::move(y), ids, [ids, m, q, n](Tape& tt, int self) {
    const Mat& adj = tt.adjoint(self);
    for (long i = 0; i < n; ++i) {
      Mat d(m, q);
      for (long l = 0; l < m; ++l)
        for (long b = 0; b < q; ++b) d(l, b) = adj(l * n + i, b * n + i);
      tt.accumulate(ids[i], d);
    }
  });
}

Var sum(Var a) {
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = a.value().sum();
  return record(*a.tape, std::move(y), {ia}, [ia](Tape& t, int self) {
    t.accumulate(ia, Mat::Constant(t.value(ia).rows(), t.value(ia).cols(),
                                   t.adjoint(self)(0, 0)));
  });
}

Var sumsq(Var a) {
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = a.value().squaredNorm();
  return record(*a.tape, std::move(y), {ia}, [ia](Tape& t, int self) {
    t.accumulate(ia, 2.0 * t.adjoint(self)(0, 0) * t.value(ia));
  });
}

Var dot(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "dot");
  int ia = a.id, ib = b.id;
  Mat y(1, 1);
  y(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return record(*a.tape, std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    double g = t.adjoint(self)(0, 0);
    t.accumulate(ia, g * t.value(ib));
    t.accumulate(ib, g * t.value(ia));
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  require(a.cols() == b.rows(), ErrorKind::Config, "autodiff: matmul inner dim mismatch");
  int ia = a.id, ib = b.id;
  return record(*a.tape, a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& adj = t.adjoint(self);
    t.accumulate(ia, adj * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * adj);
  });
}

Var affine(Var h, Var w, Var b) {
  check_same_tape(h, w);
  check_same_tape(h, b);
  require(w.cols() == h.cols(), ErrorKind::Config, "autodiff: affine weight/input mismatch");
  require(b.rows() == w.rows() && b.cols() == 1, ErrorKind::Config,
          "autodiff: affine bias shape mismatch");
  int ih = h.id, iw = w.id, ib = b.id;
  Mat y = h.value() * w.value().transpose();
  y.rowwise() += b.value().col(0).transpose();
  return record(*h.tape, std::move(y), {ih, iw, ib}, [ih, iw, ib](Tape& t, int self) {
    const Mat& adj = t.adjoint(self);
    t.accumulate(ih, adj * t.value(iw));
    t.accumulate(iw, adj.transpose() * t.value(ih));
    t.accumulate(ib, adj.colwise().sum().transpose());
  });
}

Var colwise_scale(Var a, Var s) {
  check_same_tape(a, s);
  require(s.cols() == 1 && s.rows() == a.cols(), ErrorKind::Config,
          "autodiff: colwise_scale expects s with one entry per column");
  int ia = a.id, is = s.id;
  Mat y = a.value() * s.value().col(0).asDiagonal();
  return record(*a.tape, std::move(y), {ia, is}, [ia, is](Tape& t, int self) {
    const Mat& adj = t.adjoint(self);
    t.accumulate(ia, adj * t.value(is).col(0).asDiagonal());
    Mat ds = adj.cwiseProduct(t.value(ia)).colwise().sum().transpose();
    t.accumulate(is, ds);
  });
}

Var add_scaled_identity(Var a, Var s) {
  check_same_tape(a, s);
  check_scalar(s, "add_scaled_identity");
  require(a.rows() == a.cols(), ErrorKind::Config,
          "autodiff: add_scaled_identity expects a square matrix");
  int ia = a.id, is = s.id;
  Mat y = a.value();
  y.diagonal().array() += s.scalar();
  return record(*a.tape, std::move(y), {ia, is}, [ia, is](Tape& t, int self) {
    const Mat& adj = t.adjoint(self);
    t.accumulate(ia, adj);
    Mat ds(1, 1);
    ds(0, 0) = adj.trace();
    t.accumulate(is, ds);
  });
}

Var cholesky(Var a) {
  int ia = a.id;
  Mat l = chol_lower_or_throw(a.value(), "cholesky op");
  return record(*a.tape, std::move(l), {ia}, [ia](Tape& t, int self) {
    t.accumulate(ia, cholesky_backward(t.value(self), t.adjoint(self)));
  });
}

Var solve_lower(Var l, Var b) {
  check_same_tape(l, b);
  require(l.rows() == l.cols() && l.rows() == b.rows(), ErrorKind::Config,
          "autodiff: solve_lower shape mismatch");
  int il = l.id, ib = b.id;
  Mat x = l.value().triangularView<Eigen::Lower>().solve(b.value());
  return record(*l.tape, std::move(x), {il, ib}, [il, ib](Tape& t, int self) {
    const Mat& lv = t.value(il);
    Mat bbar = lv.transpose().triangularView<Eigen::Upper>().solve(t.adjoint(self));
    Mat lbar_full = -bbar * t.value(self).transpose();
    Mat lbar = lbar_full.triangularView<Eigen::Lower>();
    t.accumulate(ib, bbar);
    t.accumulate(il, lbar);
  });
}

Var solve_lower_t(Var l, Var b) {
  check_same_tape(l, b);
  require(l.rows() == l.cols() && l.rows() == b.rows(), ErrorKind::Config,
          "autodiff: solve_lower_t shape mismatch");
  int il = l.id, ib = b.id;
  Mat x = l.value().transpose().triangularView<Eigen::Upper>().solve(b.value());
  return record(*l.tape, std::move(x), {il, ib}, [il, ib](Tape& t, int self) {
    const Mat& lv = t.value(il);
    Mat bbar = lv.triangularView<Eigen::Lower>().solve(t.adjoint(self));
    Mat lbar_full = -t.value(self) * bbar.transpose();
    Mat lbar = lbar_full.triangularView<Eigen::Lower>();
    t.accumulate(ib, bbar);
    t.accumulate(il, lbar);
  });
}

Var logdiagsum(Var l) {
  require(l.rows() == l.cols(), ErrorKind::Config, "autodiff: logdiagsum expects square");
  int il = l.id;
  Mat y(1, 1);
  y(0, 0) = l.value().diagonal().array().log().sum();
  return record(*l.tape, std::move(y), {il}, [il](Tape& t, int self) {
    Mat d = Mat::Zero(t.value(il).rows(), t.value(il).cols());
    d.diagonal() = t.adjoint(self)(0, 0) * t.value(il).diagonal().cwiseInverse();
    t.accumulate(il, d);
  });
}

Var squared_distances_const_rows(const Mat& x, Var z) {
  require(x.cols() == z.cols(), ErrorKind::Config,
          "autodiff: squared_distances dimension mismatch");
  int iz = z.id;
  long m = x.rows(), j = z.rows();
  Mat y(m, j);
  for (long a = 0; a < m; ++a)
    for (long b = 0; b < j; ++b) y(a, b) = (x.row(a) - z.value().row(b)).squaredNorm();
  return record(*z.tape, std::move(y), {iz}, [iz, x](Tape& t, int self) {
    const Mat& adj = t.adjoint(self);
    const Mat& zv = t.value(iz);
    Mat d = Mat::Zero(zv.rows(), zv.cols());
    for (long a = 0; a < x.rows(); ++a)
      for (long b = 0; b < zv.rows(); ++b)
        d.row(b) += adj(a, b) * 2.0 * (zv.row(b) - x.row(a));
    t.accumulate(iz, d);
  });
}

Var squared_distances_self(Var z) {
  int iz = z.id;
  long j = z.rows();
  Mat y(j, j);
  for (long a = 0; a < j; ++a)
    for (long b = 0; b < j; ++b) y(a, b) = (z.value().row(a) - z.value().row(b)).squaredNorm();
  return record(*z.tape, std::move(y), {iz}, [iz](Tape& t, int self) {
    const Mat& adj = t.adjoint(self);
    const Mat& zv = t.value(iz);
    Mat d = Mat::Zero(zv.rows(), zv.cols());
    for (long a = 0; a < zv.rows(); ++a)
      for (long b = 0; b < zv.rows(); ++b) {
        if (a == b) continue;
        // D(a,b) depends on both rows; collect contributions from both slots.
        d.row(a) += (adj(a, b) + adj(b, a)) * 2.0 * (zv.row(a) - zv.row(b));
      }
    t.accumulate(iz, d);
  });
}

Var block_marginals(Var t0, Var v, Var kss_diag, int n) {
  check_same_tape(t0, v);
  check_same_tape(t0, kss_diag);
  check_same_shape(t0, v, "block_marginals");
  require(n >= 1 && t0.cols() % n == 0, ErrorKind::Config,
          "autodiff: block_marginals column count not divisible by block size");
  require(kss_diag.cols() == 1 && kss_diag.rows() == t0.cols(), ErrorKind::Config,
          "autodiff: block_marginals kss_diag shape mismatch");
  long m = t0.cols() / n;
  int it = t0.id, iv = v.id, ik = kss_diag.id;
  Mat y(m * n, n);
#pragma omp parallel for schedule(static) if (m > 8)
  for (long l = 0; l < m; ++l) {
    Mat tl = t0.value().middleCols(l * n, n);
    Mat vl = v.value().middleCols(l * n, n);
    Mat block = -tl.transpose() * tl + vl.transpose() * vl;
    block.diagonal() += kss_diag.value().col(0).segment(l * n, n);
    block = 0.5 * (block + block.transpose()).eval();
    y.middleRows(l * n, n) = block;
  }
  return record(*t0.tape, std::move(y), {it, iv, ik},
                [it, iv, ik, m, n](Tape& t, int self) {
                  const Mat& adj = t.adjoint(self);
                  Mat dt = Mat::Zero(t.value(it).rows(), t.value(it).cols());
                  Mat dv = Mat::Zero(dt.rows(), dt.cols());
                  Mat dk = Mat::Zero(m * n, 1);
#pragma omp parallel for schedule(static) if (m > 8)
                  for (long l = 0; l < m; ++l) {
                    // The forward symmetrization maps the raw adjoint the same way.
                    Mat sbar = adj.middleRows(l * n, n);
                    sbar = 0.5 * (sbar + sbar.transpose()).eval();
                    Mat ssum = sbar + sbar.transpose();
                    dt.middleCols(l * n, n) = -t.value(it).middleCols(l * n, n) * ssum;
                    dv.middleCols(l * n, n) = t.value(iv).middleCols(l * n, n) * ssum;
                    dk.col(0).segment(l * n, n) = sbar.diagonal();
                  }
                  t.accumulate(it, dt);
                  t.accumulate(iv, dv);
                  t.accumulate(ik, dk);
                });
}

Var block_chol_sample(Var sigma_packed, Var mu, const Mat& eps) {
  check_same_tape(sigma_packed, mu);
  long n = sigma_packed.cols();
  require(sigma_packed.rows() % n == 0, ErrorKind::Config,
          "autodiff: block_chol_sample packed shape mismatch");
  long m = sigma_packed.rows() / n;
  require(mu.rows() == m * n && mu.cols() == 1, ErrorKind::Config,
          "autodiff: block_chol_sample mean shape mismatch");
  require(eps.rows() == m * n, ErrorKind::Config,
          "autodiff: block_chol_sample noise shape mismatch");
  int is = sigma_packed.id, im = mu.id;
  long draws = eps.cols();
  Mat y(m * n, draws);
  std::vector<Mat> ls(m);
  bool failed = false;
  long failed_at = -1;
#pragma omp parallel for schedule(static) if (m > 8)
  for (long l = 0; l < m; ++l) {
    Eigen::LLT<Mat> llt(sigma_packed.value().middleRows(l * n, n));
    if (llt.info() != Eigen::Success) {
#pragma omp critical
      {
        failed = true;
        failed_at = l;
      }
      continue;
    }
    ls[l] = llt.matrixL();
    y.middleRows(l * n, n) =
        (mu.value().middleRows(l * n, n) * Mat::Ones(1, draws)) +
        ls[l] * eps.middleRows(l * n, n);
  }
  if (failed) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "autodiff: marginal covariance block %ld is not positive definite",
                  failed_at);
    throw_numerical(buf);
  }
  return record(*sigma_packed.tape, std::move(y), {is, im},
                [is, im, m, n, eps, ls](Tape& t, int self) {
                  const Mat& adj = t.adjoint(self);
                  Mat dmu = adj.rowwise().sum();
                  Mat dsig(m * n, n);
#pragma omp parallel for schedule(static) if (m > 8)
                  for (long l = 0; l < m; ++l) {
                    Mat lbar = adj.middleRows(l * n, n) * eps.middleRows(l * n, n).transpose();
                    dsig.middleRows(l * n, n) = cholesky_backward(ls[l], lbar);
                  }
                  t.accumulate(im, dmu);
                  t.accumulate(is, dsig);
                });
}

Var gamma_quantile_op(Var shape, Var rate, double u) {
  check_same_tape(shape, rate);
  check_scalar(shape, "gamma_quantile_op");
  check_scalar(rate, "gamma_quantile_op");
  int ia = shape.id, ib = rate.id;
  GammaQuantileResult res = gamma_quantile(shape.scalar(), rate.scalar(), u);
  Mat y(1, 1);
  y(0, 0) = res.value;
  double da = res.d_shape, db = res.d_rate;
  return record(*shape.tape, std::move(y), {ia, ib}, [ia, ib, da, db](Tape& t, int self) {
    double g = t.adjoint(self)(0, 0);
    Mat ma(1, 1), mb(1, 1);
    ma(0, 0) = g * da;
    mb(0, 0) = g * db;
    t.accumulate(ia, ma);
    t.accumulate(ib, mb);
  });
}

Vec finite_difference(const std::function<double(const Vec&)>& f, const Vec& x,
                      double step) {
  Vec g(x.size());
  for (long i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

}  // namespace nica::ad
