#pragma once

// Value + input-gradient + input-Hessian-diagonal carriers.
//
// Jets<Eigen::ArrayXXd> is the plain result of differentiating a field on a
// batch; Jets<diff::Var> is the same structure living on a tape, so losses
// built from it can be differentiated with respect to parameters.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "aas/error.hpp"
#include "aas/tape.hpp"

namespace aas {

/// n x D coordinates, one point per row.
using PointBatch = Eigen::MatrixXd;

template <class M>
struct Jets {
  M value;                  // n x outputs
  std::vector<M> grad;      // D entries, each n x outputs: d/dx_k
  std::vector<M> hess;      // D entries (empty for order 1): d^2/dx_k^2

  int dim() const { return static_cast<int>(grad.size()); }
  bool has_hessian() const { return !hess.empty(); }
};

using DiffResult = Jets<Eigen::ArrayXXd>;

/// Sum of the Hessian diagonal.
inline Eigen::ArrayXXd laplacian(const DiffResult& j) {
  if (!j.has_hessian()) fail("laplacian: derivatives computed without second order");
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(j.value.rows(), j.value.cols());
  for (const auto& h : j.hess) out += h;
  return out;
}

// ---- algebra shared by plain arrays and tape nodes ---------------------------
// Operators written against these helpers run unchanged on Eigen arrays (plain
// evaluation) and on diff::Var (parameter gradients).

namespace alg {

inline Eigen::ArrayXXd col(const Eigen::ArrayXXd& a, Eigen::Index j) { return a.col(j); }
inline diff::Var col(const diff::Var& a, Eigen::Index j) { return diff::slice_cols(a, j, 1); }

/// Elementwise product with a constant n x 1 column.
inline Eigen::ArrayXXd cmul(const Eigen::ArrayXXd& a, const Eigen::ArrayXd& c) { return a.colwise() * c; }
inline diff::Var cmul(const diff::Var& a, const Eigen::ArrayXd& c) { return diff::mul_const(a, c.matrix()); }

inline Eigen::ArrayXXd cadd(const Eigen::ArrayXXd& a, const Eigen::ArrayXd& c) { return a.colwise() + c; }
inline diff::Var cadd(const diff::Var& a, const Eigen::ArrayXd& c) { return diff::add_const(a, c.matrix()); }

inline Eigen::ArrayXXd sq(const Eigen::ArrayXXd& a) { return a.square(); }
inline diff::Var sq(const diff::Var& a) { return diff::square(a); }

inline Eigen::ArrayXXd hcat(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
  Eigen::ArrayXXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}
inline diff::Var hcat(const diff::Var& a, const diff::Var& b) {
  diff::Var parts[] = {a, b};
  return diff::concat_cols(parts);
}

inline Eigen::ArrayXXd row_sum(const Eigen::ArrayXXd& a) { return a.rowwise().sum(); }
inline diff::Var row_sum(const diff::Var& a) { return diff::sum_cols(a); }

}  // namespace alg

// ---- jets on a tape -----------------------------------------------------------

/// First-order jet on a tape: value and D tangents, all n x c nodes.
struct JetVar {
  diff::Var v;
  std::vector<diff::Var> d;

  int tangents() const { return static_cast<int>(d.size()); }
};

namespace jet {

/// Constant input jet with identity seeds: d x / d x_k = e_k.
JetVar seed(diff::Tape& t, const PointBatch& x, bool with_tangents);

JetVar add(const JetVar& a, const JetVar& b);
JetVar sub(const JetVar& a, const JetVar& b);
JetVar mul(const JetVar& a, const JetVar& b);
JetVar scale(const JetVar& a, double c);
JetVar add_scalar(const JetVar& a, double c);
JetVar add_const(const JetVar& a, const Eigen::MatrixXd& c);
JetVar matmul_const(const JetVar& a, const Eigen::MatrixXd& m);
JetVar exp(const JetVar& a);
JetVar log(const JetVar& a);
JetVar tanh(const JetVar& a);
JetVar atanh(const JetVar& a);
JetVar square(const JetVar& a);
JetVar log_sech2(const JetVar& a);
JetVar log1m_sq(const JetVar& a);
JetVar sum_cols(const JetVar& a);
JetVar slice_cols(const JetVar& a, Eigen::Index start, Eigen::Index count);
JetVar concat_cols(std::span<const JetVar> parts);

/// Stacks [v; d_1; ...; d_K] row-wise (the layout the dense-network node consumes).
diff::Var stack(const JetVar& a);
/// Inverse of stack for row blocks of height n.
JetVar unstack(const diff::Var& stacked, Eigen::Index n, int tangents);

}  // namespace jet

}  // namespace aas
