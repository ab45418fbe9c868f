#include "aas/network.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "aas/error.hpp"
#include "aas/fastmath.hpp"

namespace aas {

using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;

void check_order(int order) {
  if (order != 1 && order != 2) fail("derivative order must be 1 or 2, got " + std::to_string(order));
}

void check_batch(const PointBatch& x, int dim, const char* who) {
  if (x.cols() != dim)
    fail(std::string(who) + ": batch has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(dim));
}

namespace {

constexpr Index kChunk = 4096;

struct Trace {
  std::vector<MatrixXd> inputs;  // stacked input to each layer
  std::vector<MatrixXd> pre;     // stacked pre-activation of each layer
  std::vector<MatrixXd> act;     // tanh of the value block, per hidden layer
};

// Propagates a stacked jet. `trace` receives what the reverse sweep needs.
// Blocks are contiguous per column, so the jet rules run as column loops.
MatrixXd propagate(std::span<const MatrixXd* const> w, std::span<const MatrixXd* const> b, MatrixXd x,
                   const StackLayout& L, Trace* trace) {
  const Index n = L.n;
  const int K = L.tangents;
  const std::size_t layers = w.size();
  std::vector<double> sbuf(n);
  for (std::size_t l = 0; l < layers; ++l) {
    MatrixXd y(x.rows(), w[l]->cols());
    y.noalias() = x * (*w[l]);
    y.topRows(n).rowwise() += b[l]->row(0);
    if (trace) trace->inputs.push_back(std::move(x));
    if (l + 1 == layers) {
      if (trace) trace->pre.push_back(y);
      return y;
    }
    const Index rows = y.rows(), cols = y.cols();
    MatrixXd out(rows, cols);
    MatrixXd t(n, cols);
    fast_tanh_into(y.data(), t.data(), n, cols, rows);
    double* s = sbuf.data();
    for (Index c = 0; c < cols; ++c) {
      const double* tc = t.data() + c * n;
      const double* yc = y.data() + c * rows;
      double* oc = out.data() + c * rows;
      for (Index i = 0; i < n; ++i) {
        oc[i] = tc[i];
        s[i] = 1.0 - tc[i] * tc[i];
      }
      for (int k = 0; k < K; ++k) {
        const double* yd = yc + n * (1 + k);
        double* od = oc + n * (1 + k);
        if (L.hessian) {
          const double* yh = yc + n * (1 + K + k);
          double* oh = oc + n * (1 + K + k);
          for (Index i = 0; i < n; ++i) oh[i] = s[i] * (yh[i] - 2.0 * tc[i] * yd[i] * yd[i]);
        }
        for (Index i = 0; i < n; ++i) od[i] = s[i] * yd[i];
      }
    }
    if (trace) {
      trace->pre.push_back(std::move(y));
      trace->act.push_back(std::move(t));
    }
    x = std::move(out);
  }
  return x;
}

// Reverse sweep of propagate(). Accumulates into dw/db (may be null) and
// returns the adjoint of the stacked input when `want_input` is set.
MatrixXd pullback(std::span<const MatrixXd* const> w, const Trace& tr, MatrixXd adj, const StackLayout& L,
                  std::vector<MatrixXd>* dw, std::vector<MatrixXd>* db, bool want_input) {
  const Index n = L.n;
  const int K = L.tangents;
  const std::size_t layers = w.size();
  std::vector<double> sbuf(n), vs(n), vq(n);
  for (std::size_t li = layers; li-- > 0;) {
    if (li + 1 != layers) {
      // adj holds the adjoint of this hidden layer's activated output; turn it
      // into the adjoint of the pre-activation in place.
      const MatrixXd& y = tr.pre[li];
      const MatrixXd& t = tr.act[li];
      const Index rows = y.rows();
      double* s = sbuf.data();
      for (Index c = 0; c < y.cols(); ++c) {
        const double* tc = t.data() + c * n;
        const double* yc = y.data() + c * rows;
        double* ac = adj.data() + c * rows;
        for (Index i = 0; i < n; ++i) {
          s[i] = 1.0 - tc[i] * tc[i];
          vs[i] = 0.0;
          vq[i] = 0.0;
        }
        for (int k = 0; k < K; ++k) {
          const double* yd = yc + n * (1 + k);
          double* ad = ac + n * (1 + k);
          for (Index i = 0; i < n; ++i) vs[i] += ad[i] * yd[i];
          if (L.hessian) {
            const double* yh = yc + n * (1 + K + k);
            double* ah = ac + n * (1 + K + k);
            for (Index i = 0; i < n; ++i) {
              vs[i] += ah[i] * yh[i];
              vq[i] += ah[i] * yd[i] * yd[i];
              // q = -2 t s
              ad[i] = ad[i] * s[i] - 4.0 * ah[i] * tc[i] * s[i] * yd[i];
              ah[i] *= s[i];
            }
          } else {
            for (Index i = 0; i < n; ++i) ad[i] *= s[i];
          }
        }
        for (Index i = 0; i < n; ++i)
          ac[i] = ac[i] * s[i] - 2.0 * tc[i] * s[i] * vs[i] + vq[i] * s[i] * (6.0 * tc[i] * tc[i] - 2.0);
      }
    }
    if (dw) (*dw)[li].noalias() += tr.inputs[li].transpose() * adj;
    if (db) (*db)[li] += adj.topRows(n).colwise().sum();
    if (li > 0 || want_input) {
      MatrixXd next(adj.rows(), w[li]->rows());
      next.noalias() = adj * w[li]->transpose();
      adj = std::move(next);
    }
  }
  return want_input ? adj : MatrixXd();
}

MatrixXd seeded_stack(const PointBatch& x, int order) {
  const Index n = x.rows();
  const Index D = x.cols();
  const StackLayout L{n, static_cast<int>(D), order == 2};
  MatrixXd st = MatrixXd::Zero(n * L.blocks(), D);
  st.topRows(n) = x;
  for (Index k = 0; k < D; ++k) st.block(n * (1 + k), k, n, 1).setOnes();
  return st;
}

}  // namespace

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) fail("Mlp: need at least input and output widths");
  for (int w : widths_)
    if (w <= 0) fail("Mlp: widths must be positive");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weights_.push_back(MatrixXd::Zero(widths_[l], widths_[l + 1]));
    biases_.push_back(MatrixXd::Zero(1, widths_[l + 1]));
  }
}

Mlp Mlp::random(std::vector<int> widths, Rng& rng, bool zero_output) {
  Mlp net(std::move(widths));
  for (int l = 0; l < net.layers(); ++l) {
    if (zero_output && l + 1 == net.layers()) break;
    MatrixXd& w = net.weights_[l];
    const double sd = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (Index j = 0; j < w.cols(); ++j)
      for (Index i = 0; i < w.rows(); ++i) w(i, j) = sd * rng.normal();
  }
  return net;
}

ArrayXXd Mlp::evaluate(const PointBatch& x) const {
  check_batch(x, input_dim(), "Mlp::evaluate");
  ArrayXXd out(x.rows(), output_dim());
  for (Index start = 0; start < x.rows(); start += kChunk) {
    const Index len = std::min(kChunk, x.rows() - start);
    out.middleRows(start, len) = forward_stacked(x.middleRows(start, len), StackLayout{len, 0, false}).array();
  }
  return out;
}

DiffResult Mlp::derivatives(const PointBatch& x, int order) const {
  check_order(order);
  check_batch(x, input_dim(), "Mlp::derivatives");
  const Index n = x.rows();
  const int D = input_dim();
  DiffResult r;
  r.value.resize(n, output_dim());
  r.grad.assign(D, ArrayXXd(n, output_dim()));
  if (order == 2) r.hess.assign(D, ArrayXXd(n, output_dim()));
  for (Index start = 0; start < n; start += kChunk) {
    const Index len = std::min(kChunk, n - start);
    const StackLayout L{len, D, order == 2};
    const MatrixXd out = forward_stacked(seeded_stack(x.middleRows(start, len), order), L);
    r.value.middleRows(start, len) = out.topRows(len).array();
    for (int k = 0; k < D; ++k) {
      r.grad[k].middleRows(start, len) = out.middleRows(len * (1 + k), len).array();
      if (order == 2) r.hess[k].middleRows(start, len) = out.middleRows(len * (1 + D + k), len).array();
    }
  }
  return r;
}

MatrixXd Mlp::forward_stacked(const MatrixXd& stacked, const StackLayout& layout) const {
  if (stacked.rows() != layout.n * layout.blocks()) fail("Mlp::forward_stacked: layout does not match rows");
  if (stacked.cols() != input_dim()) fail("Mlp::forward_stacked: input width mismatch");
  std::vector<const MatrixXd*> w, b;
  for (int l = 0; l < layers(); ++l) {
    w.push_back(&weights_[l]);
    b.push_back(&biases_[l]);
  }
  return propagate(w, b, stacked, layout, nullptr);
}

std::vector<diff::Var> Mlp::bind(diff::Tape& tape) const {
  std::vector<diff::Var> p;
  for (int l = 0; l < layers(); ++l) {
    p.push_back(tape.variable(weights_[l]));
    p.push_back(tape.variable(biases_[l]));
  }
  return p;
}

diff::Var Mlp::forward_stacked(std::span<const diff::Var> params, const diff::Var& stacked,
                               const StackLayout& layout) const {
  if (params.size() != 2 * static_cast<std::size_t>(layers())) fail("Mlp::forward_stacked: wrong parameter count");
  if (stacked.rows() != layout.n * layout.blocks()) fail("Mlp::forward_stacked: layout does not match rows");
  if (stacked.cols() != input_dim()) fail("Mlp::forward_stacked: input width mismatch");
  diff::Tape& tape = *stacked.tape();
  std::vector<const MatrixXd*> w, b;
  std::vector<int> wid, bid;
  for (int l = 0; l < layers(); ++l) {
    w.push_back(&params[2 * l].value());
    b.push_back(&params[2 * l + 1].value());
    wid.push_back(params[2 * l].id());
    bid.push_back(params[2 * l + 1].id());
  }
  auto trace = std::make_shared<Trace>();
  MatrixXd out = propagate(w, b, stacked.value(), layout, trace.get());
  std::vector<diff::Var> inputs{stacked};
  inputs.insert(inputs.end(), params.begin(), params.end());
  const int sid = stacked.id();
  return tape.record(std::move(out), inputs, [trace, wid, bid, sid, layout](diff::Tape& tp, const MatrixXd& adj) {
    std::vector<const MatrixXd*> wv;
    std::vector<MatrixXd> dw, db;
    for (std::size_t l = 0; l < wid.size(); ++l) {
      wv.push_back(&tp.value(wid[l]));
      dw.push_back(MatrixXd::Zero(tp.value(wid[l]).rows(), tp.value(wid[l]).cols()));
      db.push_back(MatrixXd::Zero(1, tp.value(bid[l]).cols()));
    }
    const bool want_input = tp.requires_grad(sid);
    MatrixXd din = pullback(wv, *trace, adj, layout, &dw, &db, want_input);
    for (std::size_t l = 0; l < wid.size(); ++l) {
      tp.accumulate(wid[l], dw[l]);
      tp.accumulate(bid[l], db[l]);
    }
    if (want_input) tp.accumulate(sid, din);
  });
}

Jets<diff::Var> Mlp::jets_on_tape(std::span<const diff::Var> params, const PointBatch& x, int order) const {
  check_order(order);
  check_batch(x, input_dim(), "Mlp::jets_on_tape");
  diff::Tape& tape = *params[0].tape();
  const Index n = x.rows();
  const int D = input_dim();
  const StackLayout L{n, D, order == 2};
  diff::Var out = forward_stacked(params, tape.constant(seeded_stack(x, order)), L);
  Jets<diff::Var> j;
  j.value = diff::slice_rows(out, 0, n);
  for (int k = 0; k < D; ++k) j.grad.push_back(diff::slice_rows(out, n * (1 + k), n));
  if (order == 2)
    for (int k = 0; k < D; ++k) j.hess.push_back(diff::slice_rows(out, n * (1 + D + k), n));
  return j;
}

std::vector<MatrixXd*> Mlp::parameters() {
  std::vector<MatrixXd*> p;
  for (int l = 0; l < layers(); ++l) {
    p.push_back(&weights_[l]);
    p.push_back(&biases_[l]);
  }
  return p;
}

std::vector<const MatrixXd*> Mlp::parameters() const {
  std::vector<const MatrixXd*> p;
  for (int l = 0; l < layers(); ++l) {
    p.push_back(&weights_[l]);
    p.push_back(&biases_[l]);
  }
  return p;
}

std::size_t Mlp::parameter_count() const {
  std::size_t c = 0;
  for (int l = 0; l < layers(); ++l) c += weights_[l].size() + biases_[l].size();
  return c;
}

ArrayXXd ClosureField::evaluate(const PointBatch& x) const {
  check_batch(x, in_, "ClosureField::evaluate");
  ArrayXXd out(x.rows(), out_);
  std::vector<double> xi(in_), oi(out_);
  for (Index i = 0; i < x.rows(); ++i) {
    for (int k = 0; k < in_; ++k) xi[k] = x(i, k);
    plain_(xi.data(), oi.data());
    for (int o = 0; o < out_; ++o) out(i, o) = oi[o];
  }
  return out;
}

DiffResult ClosureField::derivatives(const PointBatch& x, int order) const {
  check_order(order);
  check_batch(x, in_, "ClosureField::derivatives");
  const Index n = x.rows();
  DiffResult r;
  r.value.resize(n, out_);
  r.grad.assign(in_, ArrayXXd(n, out_));
  if (order == 2) r.hess.assign(in_, ArrayXXd(n, out_));
  std::vector<Dual2> xi(in_), oi(out_);
  for (Index i = 0; i < n; ++i) {
    for (int dir = 0; dir < in_; ++dir) {
      for (int k = 0; k < in_; ++k) xi[k] = Dual2(x(i, k), k == dir ? 1.0 : 0.0, 0.0);
      dual_(xi.data(), oi.data());
      for (int o = 0; o < out_; ++o) {
        if (dir == 0) r.value(i, o) = oi[o].v;
        r.grad[dir](i, o) = oi[o].d;
        if (order == 2) r.hess[dir](i, o) = oi[o].dd;
      }
    }
  }
  return r;
}

}  // namespace aas
