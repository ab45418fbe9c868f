#include "aas/jets.hpp"

namespace aas::jet {

using diff::Var;

JetVar seed(diff::Tape& t, const PointBatch& x, bool with_tangents) {
  JetVar j{t.constant(x), {}};
  if (with_tangents) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(x.rows(), x.cols());
      e.col(k).setOnes();
      j.d.push_back(t.constant(std::move(e)));
    }
  }
  return j;
}

namespace {
void check_tangents(const JetVar& a, const JetVar& b) {
  if (a.tangents() != b.tangents()) fail("jet: tangent count mismatch");
}

// Chain rule for an elementwise map given its derivative node at the input.
JetVar chain(Var value, const Var& derivative, const JetVar& a) {
  JetVar r{value, {}};
  r.d.reserve(a.d.size());
  for (const Var& dk : a.d) r.d.push_back(dk * derivative);
  return r;
}
}  // namespace

JetVar add(const JetVar& a, const JetVar& b) {
  check_tangents(a, b);
  JetVar r{a.v + b.v, {}};
  for (std::size_t k = 0; k < a.d.size(); ++k) r.d.push_back(a.d[k] + b.d[k]);
  return r;
}

JetVar sub(const JetVar& a, const JetVar& b) {
  check_tangents(a, b);
  JetVar r{a.v - b.v, {}};
  for (std::size_t k = 0; k < a.d.size(); ++k) r.d.push_back(a.d[k] - b.d[k]);
  return r;
}

JetVar mul(const JetVar& a, const JetVar& b) {
  check_tangents(a, b);
  JetVar r{a.v * b.v, {}};
  for (std::size_t k = 0; k < a.d.size(); ++k) r.d.push_back(a.d[k] * b.v + a.v * b.d[k]);
  return r;
}

JetVar scale(const JetVar& a, double c) {
  JetVar r{a.v * c, {}};
  for (const Var& dk : a.d) r.d.push_back(dk * c);
  return r;
}

JetVar add_scalar(const JetVar& a, double c) { return JetVar{a.v + c, a.d}; }

JetVar add_const(const JetVar& a, const Eigen::MatrixXd& c) { return JetVar{diff::add_const(a.v, c), a.d}; }

JetVar matmul_const(const JetVar& a, const Eigen::MatrixXd& m) {
  JetVar r{diff::matmul_const(a.v, m), {}};
  for (const Var& dk : a.d) r.d.push_back(diff::matmul_const(dk, m));
  return r;
}

JetVar exp(const JetVar& a) {
  Var e = diff::exp(a.v);
  return chain(e, e, a);
}

JetVar log(const JetVar& a) { return chain(diff::log(a.v), diff::recip(a.v), a); }

JetVar tanh(const JetVar& a) {
  Var th = diff::tanh(a.v);
  if (a.d.empty()) return JetVar{th, {}};
  return chain(th, 1.0 - diff::square(th), a);
}

JetVar atanh(const JetVar& a) {
  Var v = diff::atanh(a.v);
  if (a.d.empty()) return JetVar{v, {}};
  return chain(v, diff::recip(1.0 - diff::square(a.v)), a);
}

JetVar square(const JetVar& a) {
  Var v = diff::square(a.v);
  if (a.d.empty()) return JetVar{v, {}};
  return chain(v, a.v * 2.0, a);
}

JetVar log_sech2(const JetVar& a) {
  Var v = diff::log_sech2(a.v);
  if (a.d.empty()) return JetVar{v, {}};
  return chain(v, diff::tanh(a.v) * -2.0, a);
}

JetVar log1m_sq(const JetVar& a) {
  Var v = diff::log1m_sq(a.v);
  if (a.d.empty()) return JetVar{v, {}};
  return chain(v, (a.v * -2.0) / (1.0 - diff::square(a.v)), a);
}

JetVar sum_cols(const JetVar& a) {
  JetVar r{diff::sum_cols(a.v), {}};
  for (const Var& dk : a.d) r.d.push_back(diff::sum_cols(dk));
  return r;
}

JetVar slice_cols(const JetVar& a, Eigen::Index start, Eigen::Index count) {
  JetVar r{diff::slice_cols(a.v, start, count), {}};
  for (const Var& dk : a.d) r.d.push_back(diff::slice_cols(dk, start, count));
  return r;
}

JetVar concat_cols(std::span<const JetVar> parts) {
  if (parts.empty()) fail("jet::concat_cols: no parts");
  const int k = parts[0].tangents();
  std::vector<Var> vs;
  for (const JetVar& p : parts) {
    if (p.tangents() != k) fail("jet::concat_cols: tangent count mismatch");
    vs.push_back(p.v);
  }
  JetVar r{diff::concat_cols(vs), {}};
  for (int t = 0; t < k; ++t) {
    std::vector<Var> ds;
    for (const JetVar& p : parts) ds.push_back(p.d[t]);
    r.d.push_back(diff::concat_cols(ds));
  }
  return r;
}

Var stack(const JetVar& a) {
  if (a.d.empty()) return a.v;
  std::vector<Var> blocks{a.v};
  blocks.insert(blocks.end(), a.d.begin(), a.d.end());
  return diff::concat_rows(blocks);
}

JetVar unstack(const Var& stacked, Eigen::Index n, int tangents) {
  if (stacked.rows() != n * (1 + tangents)) fail("jet::unstack: row count mismatch");
  if (tangents == 0) return JetVar{stacked, {}};
  JetVar r{diff::slice_rows(stacked, 0, n), {}};
  for (int k = 0; k < tangents; ++k) r.d.push_back(diff::slice_rows(stacked, n * (k + 1), n));
  return r;
}

}  // namespace aas::jet
