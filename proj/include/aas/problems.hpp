#pragma once

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aas/jets.hpp"
#include "aas/network.hpp"
#include "aas/rng.hpp"

namespace aas {

enum class ErrorMetric { GridMse, RelativeL2 };

/// Benchmark PDE posed on the computational cube [-1,1]^D.
///
/// The operator is supplied once for plain derivative arrays and once for tape
/// jets. The source is the operator applied to the exact solution, so the
/// exact solution has zero residual by construction.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual int outputs() const = 0;
  virtual int equations() const = 0;
  virtual ErrorMetric metric() const = 0;

  virtual const Field& exact() const = 0;
  virtual Eigen::ArrayXXd apply_operator(const DiffResult& u, const PointBatch& x) const = 0;
  virtual diff::Var apply_operator(const Jets<diff::Var>& u, const PointBatch& x) const = 0;

  Eigen::ArrayXXd exact_solution(const PointBatch& x) const;
  /// n x equations
  Eigen::ArrayXXd source(const PointBatch& x) const;
  /// r(x) = L u(x) - s(x), n x equations.
  Eigen::ArrayXXd residual(const Field& u, const PointBatch& x) const;
  /// Sum over equations of r^2, per point.
  Eigen::ArrayXd residual_sq(const Field& u, const PointBatch& x) const;
  /// u(x_b) - g(x_b), n x outputs. Fails on points off the boundary.
  Eigen::ArrayXXd boundary_residual(const Field& u, const PointBatch& xb) const;

  /// Recorded residual; `s` is source(x), computed once by the caller.
  diff::Var residual_tape(const Mlp& net, std::span<const diff::Var> params, const PointBatch& x,
                          const Eigen::ArrayXXd& s) const;
  /// Recorded boundary residual against precomputed g = exact_solution(xb).
  diff::Var boundary_tape(const Mlp& net, std::span<const diff::Var> params, const PointBatch& xb,
                          const Eigen::ArrayXXd& g) const;

  PointBatch sample_domain(Eigen::Index n, Rng& rng) const;
  /// A face among the 2D faces is picked uniformly, then a uniform point on it.
  PointBatch sample_boundary(Eigen::Index n, Rng& rng) const;

  static bool on_boundary(const Eigen::RowVectorXd& p);
};

/// one_peak, two_peak, nl10d, burgers4d.
std::unique_ptr<Problem> make_problem(const std::string& name);
std::vector<std::string> problem_names();

/// Burgers coordinates: computational cube -> (t, x, y, nu).
struct BurgersMap {
  static constexpr double nu_min = 0.01;
  static double t(double c) { return 0.5 * (c + 1.0); }
  static double nu(double c) { return nu_min + (1.0 - nu_min) * 0.5 * (c + 1.0); }
};

}  // namespace aas
