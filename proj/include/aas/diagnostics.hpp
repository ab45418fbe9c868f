#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "aas/flow.hpp"
#include "aas/network.hpp"
#include "aas/problems.hpp"

namespace aas {

// ---- error metrics -----------------------------------------------------------

/// g x g meshgrid over [-1,1]^2 including the edges, row-major in x1.
PointBatch meshgrid(int g);
/// Mean square error of u against the exact solution on the 256 x 256 grid. D = 2 only.
double grid_mse(const Field& u, const Problem& problem, int g = 256);
/// ||u - u*|| / ||u*|| over the given points, all outputs pooled.
double relative_l2_error(const Field& u, const Problem& problem, const PointBatch& test);
double relative_l2_error(const Field& u, const Problem& problem, Eigen::Index n_test, Rng& rng);
/// Whichever of the two the problem declares.
double solution_error(const Field& u, const Problem& problem, const PointBatch& test);

// ---- residual statistics -------------------------------------------------------

/// Unbiased sample variance; needs two or more values.
double sample_variance(const Eigen::ArrayXd& v);
/// Var(r^2) over `samples`.
double residual_variance(const Field& u, const Problem& problem, const PointBatch& samples);

struct ResidualDistribution {
  PointBatch points;
  Eigen::ArrayXd r2;
  double z = 0.0;          // mean(r^2) |Omega|
  Eigen::ArrayXd weights;  // r^2 / sum r^2
};

/// r^2 below this everywhere counts as a zero residual.
inline constexpr double kDegenerateResidual = 1e-14;

ResidualDistribution residual_distribution(const PointBatch& points, const Eigen::ArrayXd& r2);
ResidualDistribution residual_to_distribution(const Field& u, const Problem& problem, const PointBatch& samples);
/// Multinomial resampling of the points by weight (inverse CDF).
PointBatch weighted_resample(const ResidualDistribution& d, Eigen::Index draws, Rng& rng);

// ---- Wasserstein distances -------------------------------------------------------

/// Exact W1 between weighted 1D measures, as the integral of |F_a - F_b|.
double w1_exact_1d(const Eigen::ArrayXd& xa, const Eigen::ArrayXd& wa, const Eigen::ArrayXd& xb,
                   const Eigen::ArrayXd& wb);
/// W1 between equally weighted 1D samples. Equal sizes use order statistics.
double w1_empirical_1d(Eigen::ArrayXd a, Eigen::ArrayXd b);
/// Mean 1D W1 over the projection directions (D x P, columns of unit length).
double sliced_wasserstein(const PointBatch& a, const PointBatch& b, const Eigen::MatrixXd& directions);
/// `n_proj` random directions drawn from `seed`.
double sliced_wasserstein(const PointBatch& a, const PointBatch& b, int n_proj, std::uint64_t seed);
Eigen::MatrixXd random_directions(int dim, int n_proj, std::uint64_t seed);

/// Sliced W1 between the renormalised residual distribution, represented by
/// `draws` weighted resamples, and a reference batch.
double residual_wasserstein(const ResidualDistribution& d, const PointBatch& reference, Eigen::Index draws,
                            int n_proj, std::uint64_t seed);

// ---- optimal density -------------------------------------------------------------

/// Regular node grid on [lo, hi]^dim, dim 1 or 2, n nodes per axis.
struct GridSpec {
  int dim = 1;
  int n = 2001;
  double lo = -1.0;
  double hi = 1.0;

  double h() const { return (hi - lo) / (n - 1); }
  Eigen::Index size() const { return dim == 1 ? n : static_cast<Eigen::Index>(n) * n; }
  /// Node coordinates, size() x dim; node (i, j) sits at row i * n + j.
  Eigen::MatrixXd nodes() const;
  /// Composite trapezoid weights times h^dim.
  Eigen::ArrayXd quadrature() const;
};

struct DensityOracle {
  Eigen::ArrayXd p;        // on the nodes
  double lambda = 0.0;
  double pde_residual = 0.0;  // max |2 beta lap_h p + r^2 - lambda|
  double flux = 0.0;          // max boundary |dp/dn| from the reconstructed ghost values
  double mass = 0.0;
};

/// Solves 2 beta lap p + r^2 - lambda = 0 with dp/dn = 0 and unit mass. Second
/// order differences with mirrored ghost nodes; lambda is the quadrature mean of r^2.
DensityOracle optimal_density_oracle(const Eigen::ArrayXd& r2, double beta, const GridSpec& grid);
/// Discrete int r^2 p - beta int |grad p|^2, the functional the oracle maximises.
double density_functional(const Eigen::ArrayXd& p, const Eigen::ArrayXd& r2, double beta, const GridSpec& grid);

// ---- Lipschitz bound ---------------------------------------------------------------

/// K diam + 1 / vol.
double lipschitz_density_bound(double k, double diameter, double volume);

struct LipschitzCheck {
  double k_hat = 0.0;  // max sampled |grad p|
  double p_max = 0.0;
  double bound = 0.0;
  bool holds = false;
};
LipschitzCheck check_density_bound(const FlowModel& flow, const PointBatch& samples);

}  // namespace aas
