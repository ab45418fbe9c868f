#include "aas/objectives.hpp"

#include <cmath>
#include <string>

#include "aas/error.hpp"

namespace aas {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

MatrixXd take_rows(const MatrixXd& m, const std::vector<Index>& idx) {
  MatrixXd out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

ArrayXd take(const ArrayXd& v, const std::vector<Index>& idx) {
  ArrayXd out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
  return out;
}

}  // namespace

LossBreakdown empirical_pinn_loss(const Field& u, const Problem& problem, const PointBatch& interior,
                                  const PointBatch& boundary, double gamma) {
  if (interior.rows() == 0) fail("loss: empty interior set");
  LossBreakdown r;
  r.gamma = gamma;
  r.interior = problem.residual_sq(u, interior).mean();
  if (boundary.rows() > 0) r.boundary = problem.boundary_residual(u, boundary).square().rowwise().sum().mean();
  r.total = r.interior + gamma * r.boundary;
  return r;
}

LossBreakdown aas_min_loss(const Field& u, const Problem& problem, const PointBatch& batch,
                           const PointBatch& boundary, double gamma) {
  return empirical_pinn_loss(u, problem, batch, boundary, gamma);
}

std::vector<Index> usable_points(const ArrayXd& ref_density) {
  std::vector<Index> keep;
  for (Index i = 0; i < ref_density.size(); ++i)
    if (ref_density(i) >= kDensityFloor && std::isfinite(ref_density(i))) keep.push_back(i);
  if (keep.empty()) training_abort("max step: reference density underflowed at every batch point");
  return keep;
}

LossBreakdown aas_max_objective(const FlowModel& flow, const PointBatch& batch, const ArrayXd& r2,
                                const ArrayXd& ref_density, double beta) {
  if (batch.rows() == 0) fail("max objective: empty batch");
  if (r2.size() != batch.rows() || ref_density.size() != batch.rows()) fail("max objective: size mismatch");
  const auto keep = usable_points(ref_density);
  const MatrixXd x = take_rows(batch, keep);
  const ArrayXd q = take(ref_density, keep), w = take(r2, keep);
  const DensityEval e = flow.log_density(x);
  LossBreakdown r;
  r.beta = beta;
  r.rejected = batch.rows() - static_cast<Index>(keep.size());
  r.interior = (w * e.density / q).mean();
  r.h1 = (e.grad.square().rowwise().sum() / q).mean();
  r.total = r.interior - beta * r.h1;
  return r;
}

MinTape min_loss_tape(const Mlp& net, std::span<const diff::Var> params, const Problem& problem,
                      const PointBatch& x, const ArrayXXd& source, const PointBatch& xb, const ArrayXXd& g,
                      double gamma) {
  if (x.rows() == 0) fail("loss: empty batch");
  diff::Var r = problem.residual_tape(net, params, x, source);
  diff::Var interior = diff::mean_all(diff::sum_cols(diff::square(r)));
  MinTape out;
  out.parts.gamma = gamma;
  out.parts.interior = interior.scalar();
  out.loss = interior;
  if (xb.rows() > 0) {
    diff::Var b = problem.boundary_tape(net, params, xb, g);
    diff::Var bl = diff::mean_all(diff::sum_cols(diff::square(b)));
    out.parts.boundary = bl.scalar();
    out.loss = interior + gamma * bl;
  }
  out.parts.total = out.loss.scalar();
  return out;
}

MaxTape max_objective_tape(const FlowModel& flow, std::span<const diff::Var> params, const PointBatch& batch,
                           const ArrayXd& r2, const ArrayXd& ref_density, double beta) {
  if (batch.rows() == 0) fail("max objective: empty batch");
  if (r2.size() != batch.rows() || ref_density.size() != batch.rows()) fail("max objective: size mismatch");
  const auto keep = usable_points(ref_density);
  const MatrixXd x = take_rows(batch, keep);
  const ArrayXd inv_q = take(ref_density, keep).inverse();
  const ArrayXd w = take(r2, keep) * inv_q;
  LogDensityJet j = flow.log_density_jet(params, x);
  diff::Var p = diff::exp(j.log_p);
  diff::Var g2 = diff::square(j.grad_log_p[0]);
  for (std::size_t k = 1; k < j.grad_log_p.size(); ++k) g2 = g2 + diff::square(j.grad_log_p[k]);
  // |grad p|^2 = p^2 |grad log p|^2
  diff::Var interior = diff::mean_all(diff::mul_const(p, w.matrix()));
  diff::Var h1 = diff::mean_all(diff::mul_const(diff::square(p) * g2, inv_q.matrix()));
  MaxTape out;
  out.objective = interior - beta * h1;
  out.parts.beta = beta;
  out.parts.rejected = batch.rows() - static_cast<Index>(keep.size());
  out.parts.interior = interior.scalar();
  out.parts.h1 = h1.scalar();
  out.parts.total = out.objective.scalar();
  return out;
}

}  // namespace aas
