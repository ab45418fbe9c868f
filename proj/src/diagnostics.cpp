#include "aas/diagnostics.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "aas/error.hpp"

namespace aas {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;

PointBatch meshgrid(int g) {
  if (g < 2) fail("meshgrid: need at least two nodes per axis");
  PointBatch x(static_cast<Index>(g) * g, 2);
  const double h = 2.0 / (g - 1);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      x(i * g + j, 0) = -1.0 + i * h;
      x(i * g + j, 1) = -1.0 + j * h;
    }
  return x;
}

double grid_mse(const Field& u, const Problem& problem, int g) {
  if (problem.dim() != 2) fail("grid_mse: problem '" + problem.name() + "' is not two-dimensional");
  const PointBatch x = meshgrid(g);
  return (u.evaluate(x) - problem.exact_solution(x)).square().mean();
}

double relative_l2_error(const Field& u, const Problem& problem, const PointBatch& test) {
  if (test.rows() < 1) fail("relative_l2_error: empty test set");
  const ArrayXXd ref = problem.exact_solution(test);
  const double den = ref.matrix().norm();
  if (!(den / std::sqrt(static_cast<double>(ref.size())) > 1e-12))
    fail("relative_l2_error: exact solution vanishes on the test set");
  return (u.evaluate(test) - ref).matrix().norm() / den;
}

double relative_l2_error(const Field& u, const Problem& problem, Index n_test, Rng& rng) {
  return relative_l2_error(u, problem, problem.sample_domain(n_test, rng));
}

double solution_error(const Field& u, const Problem& problem, const PointBatch& test) {
  return problem.metric() == ErrorMetric::GridMse ? grid_mse(u, problem) : relative_l2_error(u, problem, test);
}

double sample_variance(const ArrayXd& v) {
  if (v.size() < 2) fail("sample_variance: need at least two values");
  const double mean = v.mean();
  return (v - mean).square().sum() / static_cast<double>(v.size() - 1);
}

double residual_variance(const Field& u, const Problem& problem, const PointBatch& samples) {
  if (samples.rows() < 2) fail("residual_variance: need at least two samples");
  return sample_variance(problem.residual_sq(u, samples));
}

ResidualDistribution residual_distribution(const PointBatch& points, const ArrayXd& r2) {
  if (points.rows() < 1) fail("residual distribution: empty sample");
  if (r2.size() != points.rows()) fail("residual distribution: size mismatch");
  if (!(r2.maxCoeff() >= kDegenerateResidual)) fail("degenerate residual");
  ResidualDistribution d;
  d.points = points;
  d.r2 = r2;
  d.z = r2.mean() * std::pow(2.0, static_cast<double>(points.cols()));
  d.weights = r2 / r2.sum();
  return d;
}

ResidualDistribution residual_to_distribution(const Field& u, const Problem& problem, const PointBatch& samples) {
  return residual_distribution(samples, problem.residual_sq(u, samples));
}

PointBatch weighted_resample(const ResidualDistribution& d, Index draws, Rng& rng) {
  if (draws < 1) fail("weighted_resample: need at least one draw");
  std::vector<double> cdf(d.weights.size());
  std::partial_sum(d.weights.data(), d.weights.data() + d.weights.size(), cdf.begin());
  PointBatch out(draws, d.points.cols());
  for (Index i = 0; i < draws; ++i) {
    const double u = rng.uniform() * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    out.row(i) = d.points.row(it - cdf.begin());
  }
  return out;
}

namespace {

void check_measure(const ArrayXd& x, const ArrayXd& w, const char* which) {
  if (x.size() < 1 || x.size() != w.size()) fail(std::string("w1_exact_1d: bad measure ") + which);
  if ((w < 0.0).any() || std::abs(w.sum() - 1.0) > 1e-9)
    fail(std::string("w1_exact_1d: weights of ") + which + " must be nonnegative and sum to one");
}

}  // namespace

double w1_exact_1d(const ArrayXd& xa, const ArrayXd& wa, const ArrayXd& xb, const ArrayXd& wb) {
  check_measure(xa, wa, "a");
  check_measure(xb, wb, "b");
  // Signed atoms: +w for a, -w for b. Between consecutive atoms F_a - F_b is constant.
  std::vector<std::pair<double, double>> atoms;
  for (Index i = 0; i < xa.size(); ++i) atoms.emplace_back(xa(i), wa(i));
  for (Index i = 0; i < xb.size(); ++i) atoms.emplace_back(xb(i), -wb(i));
  std::sort(atoms.begin(), atoms.end(), [](const auto& p, const auto& q) { return p.first < q.first; });
  double diff = 0.0, total = 0.0;
  for (std::size_t k = 0; k + 1 < atoms.size(); ++k) {
    diff += atoms[k].second;
    total += std::abs(diff) * (atoms[k + 1].first - atoms[k].first);
  }
  return total;
}

double w1_empirical_1d(ArrayXd a, ArrayXd b) {
  if (a.size() < 1 || b.size() < 1) fail("w1_empirical_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) return (a - b).abs().mean();
  // Merge walk over the two step CDFs.
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  Index i = 0, j = 0;
  double x = std::min(a(0), b(0)), total = 0.0;
  while (i < a.size() || j < b.size()) {
    double next;
    if (j >= b.size() || (i < a.size() && a(i) <= b(j))) {
      next = a(i);
    } else {
      next = b(j);
    }
    total += std::abs(i / na - j / nb) * (next - x);
    x = next;
    while (i < a.size() && a(i) == x) ++i;
    while (j < b.size() && b(j) == x) ++j;
  }
  return total;
}

MatrixXd random_directions(int dim, int n_proj, std::uint64_t seed) {
  if (dim < 1 || n_proj < 1) fail("random_directions: need positive dimension and count");
  Rng rng(seed);
  MatrixXd d(dim, n_proj);
  for (int p = 0; p < n_proj; ++p) {
    double norm = 0.0;
    while (norm < 1e-12) {
      for (int k = 0; k < dim; ++k) d(k, p) = rng.normal();
      norm = d.col(p).norm();
    }
    d.col(p) /= norm;
  }
  return d;
}

double sliced_wasserstein(const PointBatch& a, const PointBatch& b, const MatrixXd& directions) {
  if (a.rows() < 1 || b.rows() < 1) fail("sliced_wasserstein: empty batch");
  if (a.cols() != b.cols() || directions.rows() != a.cols()) fail("sliced_wasserstein: dimension mismatch");
  if (directions.cols() < 1) fail("sliced_wasserstein: need at least one projection");
  const MatrixXd pa = a * directions, pb = b * directions;
  double total = 0.0;
  for (Index p = 0; p < directions.cols(); ++p) total += w1_empirical_1d(pa.col(p).array(), pb.col(p).array());
  return total / static_cast<double>(directions.cols());
}

double sliced_wasserstein(const PointBatch& a, const PointBatch& b, int n_proj, std::uint64_t seed) {
  return sliced_wasserstein(a, b, random_directions(static_cast<int>(a.cols()), n_proj, seed));
}

double residual_wasserstein(const ResidualDistribution& d, const PointBatch& reference, Index draws, int n_proj,
                            std::uint64_t seed) {
  Rng rng(derive_seed(seed, "resample"));
  return sliced_wasserstein(weighted_resample(d, draws, rng), reference, n_proj, derive_seed(seed, "projections"));
}

// ---- optimal density ----------------------------------------------------------------

MatrixXd GridSpec::nodes() const {
  MatrixXd x(size(), dim);
  for (int i = 0; i < n; ++i) {
    if (dim == 1) {
      x(i, 0) = lo + i * h();
      continue;
    }
    for (int j = 0; j < n; ++j) {
      x(static_cast<Index>(i) * n + j, 0) = lo + i * h();
      x(static_cast<Index>(i) * n + j, 1) = lo + j * h();
    }
  }
  return x;
}

namespace {

ArrayXd trapezoid(int n) {
  ArrayXd w = ArrayXd::Ones(n);
  w(0) = w(n - 1) = 0.5;
  return w;
}

void check_grid(const GridSpec& g) {
  if (g.dim != 1 && g.dim != 2) fail("grid: dimension must be 1 or 2");
  if (g.n < 3 || !(g.hi > g.lo)) fail("grid: malformed spec");
}

// Mirrored neighbour index along one axis.
int mirror(int i, int n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); }

// Applies the ghost-node Neumann Laplacian.
ArrayXd apply_laplacian(const ArrayXd& p, const GridSpec& g) {
  const int n = g.n;
  const double ih2 = 1.0 / (g.h() * g.h());
  ArrayXd out(p.size());
  if (g.dim == 1) {
    for (int i = 0; i < n; ++i) out(i) = (p(mirror(i - 1, n)) - 2.0 * p(i) + p(mirror(i + 1, n))) * ih2;
    return out;
  }
  auto at = [&](int i, int j) { return p(static_cast<Index>(mirror(i, n)) * n + mirror(j, n)); };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out(static_cast<Index>(i) * n + j) =
          (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4.0 * at(i, j)) * ih2;
  return out;
}

}  // namespace

ArrayXd GridSpec::quadrature() const {
  check_grid(*this);
  const ArrayXd w = trapezoid(n);
  if (dim == 1) return w * h();
  ArrayXd q(size());
  for (int i = 0; i < n; ++i) q.segment(static_cast<Index>(i) * n, n) = w(i) * w * h() * h();
  return q;
}

DensityOracle optimal_density_oracle(const ArrayXd& r2, double beta, const GridSpec& g) {
  check_grid(g);
  if (!(beta > 0.0)) fail("optimal_density_oracle: beta must be positive");
  if (r2.size() != g.size()) fail("optimal_density_oracle: r^2 does not match the grid");
  const Index N = g.size();
  const int n = g.n;
  const double c = 2.0 * beta / (g.h() * g.h());
  const ArrayXd q = g.quadrature();
  DensityOracle out;
  out.lambda = (q * r2).sum() / q.sum();

  // Bordered system [2 beta L, q; q^T, 0] [d; mu] = [lambda - r^2; 0] for the
  // deviation d = p - 1 / |Omega|. q spans the left null space of L, so the
  // border removes the constant mode. Solving for d keeps the rounding of the
  // constant part out of the residual.
  std::vector<Eigen::Triplet<double>> trip;
  auto add = [&](Index row, Index col, double v) { trip.emplace_back(row, col, v); };
  auto id = [&](int i, int j) { return static_cast<Index>(mirror(i, n)) * n + mirror(j, n); };
  for (int i = 0; i < n; ++i) {
    if (g.dim == 1) {
      add(i, mirror(i - 1, n), c);
      add(i, mirror(i + 1, n), c);
      add(i, i, -2.0 * c);
      continue;
    }
    for (int j = 0; j < n; ++j) {
      const Index r = static_cast<Index>(i) * n + j;
      add(r, id(i - 1, j), c);
      add(r, id(i + 1, j), c);
      add(r, id(i, j - 1), c);
      add(r, id(i, j + 1), c);
      add(r, r, -4.0 * c);
    }
  }
  for (Index k = 0; k < N; ++k) {
    add(k, N, q(k));
    add(N, k, q(k));
  }
  Eigen::SparseMatrix<double> A(N + 1, N + 1);
  A.setFromTriplets(trip.begin(), trip.end());
  A.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success) fail("optimal_density_oracle: singular system");
  Eigen::VectorXd rhs(N + 1);
  rhs.head(N) = (out.lambda - r2).matrix();
  rhs(N) = 0.0;
  Eigen::VectorXd sol = lu.solve(rhs);
  for (int it = 0; it < 3; ++it) sol += lu.solve(rhs - A * sol);
  if (!sol.allFinite()) fail("optimal_density_oracle: singular system");
  const ArrayXd d = sol.head(N).array();
  out.p = d + 1.0 / q.sum();

  const ArrayXd lap = apply_laplacian(d, g);
  out.pde_residual = (2.0 * beta * lap + r2 - out.lambda).abs().maxCoeff();
  out.mass = (q * out.p).sum();

  // Ghost value that would satisfy each boundary row exactly, then the
  // centred normal derivative it implies.
  const double h = g.h();
  auto flux_at = [&](Index node, Index inner) {
    const double need = (out.lambda - r2(node)) / (2.0 * beta);
    const double ghost = d(inner) + (need - lap(node)) * h * h;
    return std::abs(d(inner) - ghost) / (2.0 * h);
  };
  double flux = 0.0;
  if (g.dim == 1) {
    flux = std::max(flux_at(0, 1), flux_at(n - 1, n - 2));
  } else {
    for (int k = 0; k < n; ++k) {
      flux = std::max({flux, flux_at(id(0, k), id(1, k)), flux_at(id(n - 1, k), id(n - 2, k)),
                       flux_at(id(k, 0), id(k, 1)), flux_at(id(k, n - 1), id(k, n - 2))});
    }
  }
  out.flux = flux;
  return out;
}

double density_functional(const ArrayXd& p, const ArrayXd& r2, double beta, const GridSpec& g) {
  check_grid(g);
  if (p.size() != g.size() || r2.size() != g.size()) fail("density_functional: size mismatch");
  const int n = g.n;
  const double h = g.h();
  double energy = 0.0;
  if (g.dim == 1) {
    for (int i = 0; i + 1 < n; ++i) energy += h * std::pow((p(i + 1) - p(i)) / h, 2);
  } else {
    const ArrayXd w = trapezoid(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Index r = static_cast<Index>(i) * n + j;
        if (i + 1 < n) energy += w(j) * h * h * std::pow((p(r + n) - p(r)) / h, 2);
        if (j + 1 < n) energy += w(i) * h * h * std::pow((p(r + 1) - p(r)) / h, 2);
      }
  }
  return (g.quadrature() * r2 * p).sum() - beta * energy;
}

double lipschitz_density_bound(double k, double diameter, double volume) {
  if (k < 0.0 || !(diameter > 0.0) || !(volume > 0.0)) fail("lipschitz_density_bound: invalid inputs");
  return k * diameter + 1.0 / volume;
}

LipschitzCheck check_density_bound(const FlowModel& flow, const PointBatch& samples) {
  const DensityEval e = flow.log_density(samples);
  const int D = flow.dim();
  LipschitzCheck c;
  c.k_hat = e.grad.square().rowwise().sum().sqrt().maxCoeff();
  c.p_max = e.density.maxCoeff();
  c.bound = lipschitz_density_bound(c.k_hat, 2.0 * std::sqrt(static_cast<double>(D)), std::pow(2.0, D));
  c.holds = c.p_max <= c.bound * (1.0 + 1e-6);
  return c;
}

}  // namespace aas
