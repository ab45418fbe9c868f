#pragma once

// Reverse-mode recording over dense matrix-valued nodes.
//
// Every node holds an Eigen matrix (typically batch x columns). Forward-mode
// input derivatives are expressed as ordinary nodes (see jets.hpp), so one
// reverse sweep differentiates losses that contain gradients and Laplacians
// with respect to the network inputs.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace aas::diff {

using Mat = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& adj)>;

  Var constant(Mat value);
  /// Leaf whose adjoint is accumulated by backward().
  Var variable(Mat value);

  /// Records a node. `backward` is kept only when some input requires a gradient.
  Var record(Mat value, std::span<const Var> inputs, Backward backward);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var& v) const { return requires_grad(v.id()); }

  /// Adds `contribution` to the adjoint of `id` (no-op for constants).
  void accumulate(int id, const Mat& contribution);
  template <class Expr>
  void accumulate_expr(int id, const Expr& contribution);

  /// Seeds the 1x1 node `loss` with adjoint 1 and sweeps backwards.
  void backward(const Var& loss);

  /// Adjoint of a node after backward(); zeros if nothing reached it.
  Mat grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat adj;
    bool requires_grad = false;
    bool has_adj = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

template <class Expr>
void Tape::accumulate_expr(int id, const Expr& contribution) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_adj) {
    n.adj = contribution;
    n.has_adj = true;
  } else {
    n.adj += contribution;
  }
}

// ---- elementwise arithmetic -------------------------------------------------
// Binary operations accept equal shapes, a 1x1 operand, or an n x 1 column
// broadcast across the columns of the other operand.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// Elementwise product with a constant (same shape or broadcast column).
Var mul_const(const Var& a, const Mat& c);
Var add_const(const Var& a, const Mat& c);
/// a * m for a constant matrix m.
Var matmul_const(const Var& a, const Mat& m);

Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var atanh(const Var& a);
Var square(const Var& a);
Var recip(const Var& a);
Var pow(const Var& a, double p);
/// log(1 - tanh(a)^2), evaluated without cancellation for large |a|.
Var log_sech2(const Var& a);
/// log(1 - a^2).
Var log1m_sq(const Var& a);

// ---- reductions and structure ----------------------------------------------

Var sum_cols(const Var& a);  // n x c -> n x 1
Var sum_all(const Var& a);   // -> 1 x 1
Var mean_all(const Var& a);  // -> 1 x 1
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, const Var& a) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, const Var& a) { return add_scalar(neg(a), c); }

}  // namespace aas::diff
