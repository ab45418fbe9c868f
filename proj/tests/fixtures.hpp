#pragma once

#include "aas/flow.hpp"
#include "aas/problems.hpp"

namespace testing {

using aas::FlowConfig;
using aas::FlowModel;
using aas::Mlp;
using aas::Rng;
using Eigen::MatrixXd;

inline FlowModel identity_flow(int dim, std::uint64_t seed = 1) {
  Rng rng(seed);
  FlowConfig cfg;
  cfg.dim = dim;
  return FlowModel(cfg, rng);
}

// Non-trivial flow: the zeroed output layers get random weights.
inline FlowModel bent_flow(int dim, std::uint64_t seed, double amp = 0.1) {
  FlowModel f = identity_flow(dim, seed);
  Rng rng(seed + 1000);
  for (Mlp& net : f.conditioners()) {
    MatrixXd& w = net.weight(net.layers() - 1);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = amp * rng.normal();
    net.bias(net.layers() - 1).setConstant(0.05);
  }
  return f;
}

inline FlowModel mixture_flow(std::uint64_t seed) {
  Rng rng(seed);
  FlowConfig cfg;
  cfg.dim = 2;
  cfg.mixture = true;
  cfg.prior.means = MatrixXd(2, 2);
  cfg.prior.means << 0.5, 0.5, -0.4, -0.3;
  cfg.prior.sigmas = Eigen::Vector2d(0.3, 0.5);
  cfg.prior.weights = Eigen::Vector2d(0.4, 0.6);
  return FlowModel(cfg, rng);
}

// Zero-order operator with zero exact solution: the residual is u itself and
// the boundary residual is u on the boundary.
class IdentityProblem final : public aas::Problem {
 public:
  explicit IdentityProblem(int dim = 2, aas::ErrorMetric metric = aas::ErrorMetric::RelativeL2)
      : dim_(dim),
        metric_(metric),
        zero_(dim, 1, [](const double*, double* o) { o[0] = 0.0; }, [](const aas::Dual2*, aas::Dual2* o) { o[0] = 0.0; }) {}
  std::string name() const override { return "identity_stub"; }
  int dim() const override { return dim_; }
  int outputs() const override { return 1; }
  int equations() const override { return 1; }
  aas::ErrorMetric metric() const override { return metric_; }
  const aas::Field& exact() const override { return zero_; }
  Eigen::ArrayXXd apply_operator(const aas::DiffResult& u, const aas::PointBatch&) const override { return u.value; }
  aas::diff::Var apply_operator(const aas::Jets<aas::diff::Var>& u, const aas::PointBatch&) const override {
    return u.value;
  }

 private:
  int dim_;
  aas::ErrorMetric metric_;
  aas::ClosureField zero_;
};

}  // namespace testing
