#pragma once

// Bounded normalizing flow on the open hypercube (-1,1)^D.
//
// x -> atanh(x), then couplings on the real line, then tanh back into the cube.
// A coupling maps each active coordinate by v + t + a tanh(v - c), with
// a = exp(s) - 1 and |s| < scale_bound, conditioned on the passive coordinates
// in cube form. Its slope tends to 1 in both tails, so the density and its
// gradient stay bounded up to the boundary.

#include <Eigen/Dense>

#include <vector>

#include "aas/jets.hpp"
#include "aas/network.hpp"
#include "aas/rng.hpp"

namespace aas {

/// Axis-aligned mixture of normals truncated to the cube.
struct MixturePrior {
  Eigen::MatrixXd means;  // components x D
  Eigen::VectorXd sigmas;
  Eigen::VectorXd weights;  // sums to 1
};

struct FlowConfig {
  int dim = 2;
  int layers = 6;
  int hidden = 24;
  int depth = 2;
  double scale_bound = 2.0;
  bool mixture = false;
  MixturePrior prior;
};

struct DensityEval {
  Eigen::ArrayXd log_density;
  Eigen::ArrayXd density;
  Eigen::ArrayXXd grad;  // n x D, gradient of the density
};

/// log p and d/dx_k log p on a tape.
struct LogDensityJet {
  diff::Var log_p;                 // n x 1
  std::vector<diff::Var> grad_log_p;  // D entries, n x 1
};

inline constexpr double kBoundaryClamp = 1e-6;

class FlowModel {
 public:
  FlowModel() = default;
  /// Identity-initialised flow: conditioners random except a zero output layer.
  FlowModel(const FlowConfig& cfg, Rng& rng);

  int dim() const { return cfg_.dim; }
  const FlowConfig& config() const { return cfg_; }

  struct Mapped {
    Eigen::MatrixXd z;
    Eigen::ArrayXd logdet;
  };
  Mapped forward(const PointBatch& x) const;
  PointBatch inverse(const PointBatch& z) const;

  Eigen::ArrayXd log_density_values(const PointBatch& x) const;
  DensityEval log_density(const PointBatch& x) const;
  PointBatch sample(Eigen::Index n, Rng& rng) const;

  /// Parameter leaves, conditioner by conditioner in bind() order.
  std::vector<diff::Var> bind(diff::Tape& tape) const;
  LogDensityJet log_density_jet(std::span<const diff::Var> params, const PointBatch& x) const;

  std::vector<Eigen::MatrixXd*> parameters();
  std::vector<const Eigen::MatrixXd*> parameters() const;
  std::size_t parameter_count() const;

  Eigen::ArrayXd prior_log_density(const Eigen::MatrixXd& z) const;
  Eigen::MatrixXd prior_sample(Eigen::Index n, Rng& rng) const;

  const std::vector<Mlp>& conditioners() const { return nets_; }
  std::vector<Mlp>& conditioners() { return nets_; }

 private:
  struct Split {
    std::vector<int> active, passive;
    Eigen::MatrixXd sel_active, sel_passive;  // D x |a|, D x |p| selection matrices
  };

  struct Coupling {
    Eigen::ArrayXXd a, shift, centre;  // n x |active|
  };
  Coupling coupling(std::size_t layer, const Eigen::MatrixXd& y) const;

  static std::vector<Split> make_splits(int dim, int layers);
  Eigen::MatrixXd clamp_checked(const PointBatch& x, const char* who) const;
  JetVar prior_log_density_jet(const JetVar& z) const;

  FlowConfig cfg_;
  std::vector<Split> splits_;
  std::vector<Mlp> nets_;
  std::vector<double> log_trunc_;  // log truncation mass per mixture component
};

}  // namespace aas
