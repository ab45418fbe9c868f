#pragma once

#include <Eigen/Dense>

#include <span>

#include "aas/flow.hpp"
#include "aas/network.hpp"
#include "aas/problems.hpp"

namespace aas {

struct LossBreakdown {
  double interior = 0.0;
  double boundary = 0.0;
  double h1 = 0.0;
  double total = 0.0;
  double gamma = 0.0;
  double beta = 0.0;
  Eigen::Index rejected = 0;  // max step only: points whose reference density underflowed
};

/// Densities below this are treated as underflow inside importance ratios.
inline constexpr double kDensityFloor = 1e-12;

/// (1/N_r) sum r^2 + gamma (1/N_b) sum b^2 on fixed collocation sets.
LossBreakdown empirical_pinn_loss(const Field& u, const Problem& problem, const PointBatch& interior,
                                  const PointBatch& boundary, double gamma);

/// Same estimator on a batch drawn from the flow; the samples carry no weights.
LossBreakdown aas_min_loss(const Field& u, const Problem& problem, const PointBatch& batch,
                           const PointBatch& boundary, double gamma);

/// Importance-sampled max objective on a batch drawn from the reference p'.
/// `r2` and `ref_density` are per-point constants.
LossBreakdown aas_max_objective(const FlowModel& flow, const PointBatch& batch, const Eigen::ArrayXd& r2,
                                const Eigen::ArrayXd& ref_density, double beta);

/// Recorded min-step loss for parameter gradients of the solution network.
struct MinTape {
  diff::Var loss;
  LossBreakdown parts;
};
MinTape min_loss_tape(const Mlp& net, std::span<const diff::Var> params, const Problem& problem,
                      const PointBatch& x, const Eigen::ArrayXXd& source, const PointBatch& xb,
                      const Eigen::ArrayXXd& g, double gamma);

/// Recorded max objective; gradients reach the flow parameters only.
struct MaxTape {
  diff::Var objective;
  LossBreakdown parts;
};
MaxTape max_objective_tape(const FlowModel& flow, std::span<const diff::Var> params, const PointBatch& batch,
                           const Eigen::ArrayXd& r2, const Eigen::ArrayXd& ref_density, double beta);

/// Indices of batch points whose reference density is usable; fails if none is.
std::vector<Eigen::Index> usable_points(const Eigen::ArrayXd& ref_density);

}  // namespace aas
