#include "aas/tape.hpp"

#include <malloc.h>

#include <cmath>
#include <string>

#include "aas/error.hpp"
#include "aas/fastmath.hpp"

namespace aas::diff {

namespace {
// Tape nodes are large short-lived matrices. With glibc's default thresholds
// each one is an mmap/munmap pair and the page faults dominate run time.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
}  // namespace

const Mat& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Mat& v = value();
  if (v.rows() != 1 || v.cols() != 1) fail("Var::scalar: node is not 1x1");
  return v(0, 0);
}

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), true, false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Mat value, std::span<const Var> inputs, Backward backward) {
  bool rg = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) fail("Tape::record: input belongs to another tape");
    rg = rg || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Mat(), rg, false, rg ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Mat& contribution) { accumulate_expr(id, contribution); }

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) fail("Tape::backward: loss belongs to another tape");
  Node& root = nodes_[loss.id()];
  if (root.value.rows() != 1 || root.value.cols() != 1) fail("Tape::backward: loss must be 1x1");
  if (!std::isfinite(root.value(0, 0))) training_abort("non-finite loss");
  for (Node& n : nodes_) n.has_adj = false;
  if (!root.requires_grad) return;
  root.adj = Mat::Ones(1, 1);
  root.has_adj = true;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_adj || !n.backward) continue;
    n.backward(*this, n.adj);
  }
}

Mat Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_adj) return n.adj;
  return Mat::Zero(n.value.rows(), n.value.cols());
}

namespace {

struct Shape {
  Eigen::Index rows, cols;
};

Shape broadcast_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a.rows(), a.cols()};
  if (b.size() == 1) return {a.rows(), a.cols()};
  if (a.size() == 1) return {b.rows(), b.cols()};
  if (a.rows() == b.rows() && b.cols() == 1) return {a.rows(), a.cols()};
  if (a.rows() == b.rows() && a.cols() == 1) return {b.rows(), b.cols()};
  fail(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
       " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

Mat expand(const Mat& m, Shape s) {
  if (m.rows() == s.rows && m.cols() == s.cols) return m;
  if (m.size() == 1) return Mat::Constant(s.rows, s.cols, m(0, 0));
  return m.col(0).replicate(1, s.cols);
}

// Sums an adjoint of the broadcast shape back to the operand shape.
Mat reduce(const Mat& adj, Eigen::Index rows, Eigen::Index cols) {
  if (adj.rows() == rows && adj.cols() == cols) return adj;
  if (rows == 1 && cols == 1) return Mat::Constant(1, 1, adj.sum());
  return adj.rowwise().sum();
}

template <class F, class D>
Var unary(const Var& a, F f, D dfdx) {
  Tape& t = *a.tape();
  Mat out = a.value().unaryExpr(f);
  const int ia = a.id();
  Var in[] = {a};
  return t.record(std::move(out), in, [ia, dfdx](Tape& tp, const Mat& adj) {
    const Mat& x = tp.value(ia);
    tp.accumulate_expr(ia, (adj.array() * x.unaryExpr(dfdx).array()).matrix());
  });
}

double log_sech2_value(double u) {
  const double a = std::abs(u);
  return 2.0 * std::log(2.0) - 2.0 * a - 2.0 * std::log1p(std::exp(-2.0 * a));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const Shape s = broadcast_shape(a.value(), b.value(), "add");
  Mat out = expand(a.value(), s) + expand(b.value(), s);
  const int ia = a.id(), ib = b.id();
  const Shape sa{a.rows(), a.cols()}, sb{b.rows(), b.cols()};
  Var in[] = {a, b};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) {
    tp.accumulate(ia, reduce(adj, sa.rows, sa.cols));
    tp.accumulate(ib, reduce(adj, sb.rows, sb.cols));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const Shape s = broadcast_shape(a.value(), b.value(), "sub");
  Mat out = expand(a.value(), s) - expand(b.value(), s);
  const int ia = a.id(), ib = b.id();
  const Shape sa{a.rows(), a.cols()}, sb{b.rows(), b.cols()};
  Var in[] = {a, b};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) {
    tp.accumulate(ia, reduce(adj, sa.rows, sa.cols));
    tp.accumulate(ib, reduce(-adj, sb.rows, sb.cols));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const Shape s = broadcast_shape(a.value(), b.value(), "mul");
  Mat out = (expand(a.value(), s).array() * expand(b.value(), s).array()).matrix();
  const int ia = a.id(), ib = b.id();
  const Shape sa{a.rows(), a.cols()}, sb{b.rows(), b.cols()};
  Var in[] = {a, b};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) {
    if (tp.requires_grad(ia)) {
      Mat g = (adj.array() * expand(tp.value(ib), s).array()).matrix();
      tp.accumulate(ia, reduce(g, sa.rows, sa.cols));
    }
    if (tp.requires_grad(ib)) {
      Mat g = (adj.array() * expand(tp.value(ia), s).array()).matrix();
      tp.accumulate(ib, reduce(g, sb.rows, sb.cols));
    }
  });
}

Var div(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  const Shape s = broadcast_shape(a.value(), b.value(), "div");
  Mat out = (expand(a.value(), s).array() / expand(b.value(), s).array()).matrix();
  const int ia = a.id(), ib = b.id();
  const Shape sa{a.rows(), a.cols()}, sb{b.rows(), b.cols()};
  Var in[] = {a, b};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) {
    const Mat bb = expand(tp.value(ib), s);
    if (tp.requires_grad(ia)) {
      Mat g = (adj.array() / bb.array()).matrix();
      tp.accumulate(ia, reduce(g, sa.rows, sa.cols));
    }
    if (tp.requires_grad(ib)) {
      const Mat aa = expand(tp.value(ia), s);
      Mat g = (-adj.array() * aa.array() / bb.array().square()).matrix();
      tp.accumulate(ib, reduce(g, sb.rows, sb.cols));
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Var in[] = {a};
  return t.record(a.value() * c, in, [=](Tape& tp, const Mat& adj) { tp.accumulate_expr(ia, adj * c); });
}

Var add_scalar(const Var& a, double c) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Var in[] = {a};
  Mat out = (a.value().array() + c).matrix();
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) { tp.accumulate(ia, adj); });
}

Var mul_const(const Var& a, const Mat& c) {
  Tape& t = *a.tape();
  const Shape s = broadcast_shape(a.value(), c, "mul_const");
  if (s.rows != a.rows() || s.cols != a.cols()) fail("mul_const: constant may not enlarge the operand");
  Mat cc = expand(c, s);
  Mat out = (a.value().array() * cc.array()).matrix();
  const int ia = a.id();
  Var in[] = {a};
  return t.record(std::move(out), in, [ia, cc = std::move(cc)](Tape& tp, const Mat& adj) {
    tp.accumulate_expr(ia, (adj.array() * cc.array()).matrix());
  });
}

Var add_const(const Var& a, const Mat& c) {
  Tape& t = *a.tape();
  const Shape s = broadcast_shape(a.value(), c, "add_const");
  if (s.rows != a.rows() || s.cols != a.cols()) fail("add_const: constant may not enlarge the operand");
  Mat out = a.value() + expand(c, s);
  const int ia = a.id();
  Var in[] = {a};
  return t.record(std::move(out), in, [ia](Tape& tp, const Mat& adj) { tp.accumulate(ia, adj); });
}

Var matmul_const(const Var& a, const Mat& m) {
  if (a.cols() != m.rows()) fail("matmul_const: inner dimensions differ");
  Tape& t = *a.tape();
  const int ia = a.id();
  Var in[] = {a};
  return t.record(a.value() * m, in, [ia, m](Tape& tp, const Mat& adj) { tp.accumulate(ia, adj * m.transpose()); });
}

Var exp(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.value().array().exp().matrix();
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  Var in[] = {a};
  return t.record(std::move(out), in, [ia, self](Tape& tp, const Mat& adj) {
    tp.accumulate_expr(ia, (adj.array() * tp.value(self).array()).matrix());
  });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  Var in[] = {a};
  return t.record(fast_tanh(a.value().array()).matrix(), in, [ia, self](Tape& tp, const Mat& adj) {
    tp.accumulate_expr(ia, (adj.array() * (1.0 - tp.value(self).array().square())).matrix());
  });
}

Var atanh(const Var& a) {
  return unary(a, [](double x) { return std::atanh(x); }, [](double x) { return 1.0 / (1.0 - x * x); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var recip(const Var& a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); });
}

Var pow(const Var& a, double p) {
  return unary(a, [p](double x) { return std::pow(x, p); }, [p](double x) { return p * std::pow(x, p - 1.0); });
}

Var log_sech2(const Var& a) {
  return unary(a, log_sech2_value, [](double x) { return -2.0 * std::tanh(x); });
}

Var log1m_sq(const Var& a) {
  return unary(a, [](double x) { return std::log1p(-x * x); }, [](double x) { return -2.0 * x / (1.0 - x * x); });
}

Var sum_cols(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.value().rowwise().sum();
  const int ia = a.id();
  const Eigen::Index c = a.cols();
  Var in[] = {a};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) { tp.accumulate(ia, adj.col(0).replicate(1, c)); });
}

Var sum_all(const Var& a) {
  Tape& t = *a.tape();
  Mat out = Mat::Constant(1, 1, a.value().sum());
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Var in[] = {a};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) { tp.accumulate(ia, Mat::Constant(r, c, adj(0, 0))); });
}

Var mean_all(const Var& a) {
  if (a.value().size() == 0) fail("mean_all: empty operand");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) fail("slice_cols: out of range");
  Tape& t = *a.tape();
  Mat out = a.value().middleCols(start, count);
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Var in[] = {a};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) {
    Mat g = Mat::Zero(r, c);
    g.middleCols(start, count) = adj;
    tp.accumulate(ia, g);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) fail("slice_rows: out of range");
  Tape& t = *a.tape();
  Mat out = a.value().middleRows(start, count);
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Var in[] = {a};
  return t.record(std::move(out), in, [=](Tape& tp, const Mat& adj) {
    Mat g = Mat::Zero(r, c);
    g.middleRows(start, count) = adj;
    tp.accumulate(ia, g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail("concat_cols: no parts");
  Tape& t = *parts[0].tape();
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) fail("concat_cols: row mismatch");
    c += p.cols();
  }
  Mat out(r, c);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return t.record(std::move(out), parts, [ids, widths](Tape& tp, const Mat& adj) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], adj.middleCols(o, widths[i]));
      o += widths[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail("concat_rows: no parts");
  Tape& t = *parts[0].tape();
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) fail("concat_rows: column mismatch");
    r += p.rows();
  }
  Mat out(r, c);
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  return t.record(std::move(out), parts, [ids, heights](Tape& tp, const Mat& adj) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], adj.middleRows(o, heights[i]));
      o += heights[i];
    }
  });
}

}  // namespace aas::diff
