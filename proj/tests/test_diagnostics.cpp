#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "aas/diagnostics.hpp"
#include "fixtures.hpp"
#include "support.hpp"
#include "transport_lp.hpp"

using namespace aas;
using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::MatrixXd;

namespace {

// Exact solution plus a constant, or scaled.
ClosureField shifted_exact(const Problem& p, double shift, double scale = 1.0) {
  const Field& exact = p.exact();
  const int d = p.dim(), m = p.outputs();
  return ClosureField(
      d, m,
      [&exact, d, m, shift, scale](const double* x, double* o) {
        PointBatch pt(1, d);
        for (int k = 0; k < d; ++k) pt(0, k) = x[k];
        const ArrayXXd v = exact.evaluate(pt);
        for (int c = 0; c < m; ++c) o[c] = scale * v(0, c) + shift;
      },
      [](const Dual2*, Dual2*) { fail("values only"); });
}

ArrayXd random_weights(Rng& rng, int n) {
  ArrayXd w(n);
  for (int i = 0; i < n; ++i) w(i) = rng.uniform() + 0.01;
  return w / w.sum();
}

PointBatch column(const ArrayXd& v) { return v.matrix(); }

ArrayXd uniform_column(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
  ArrayXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

MatrixXd plus_minus_one() {
  MatrixXd d(1, 2);
  d << 1.0, -1.0;
  return d;
}

}  // namespace

// ---- error metrics -----------------------------------------------------------

TEST_CASE("meshgrid covers the square including edges") {
  const PointBatch g = meshgrid(5);
  REQUIRE(g.rows() == 25);
  CHECK(g(0, 0) == -1.0);
  CHECK(g(0, 1) == -1.0);
  CHECK(g(24, 0) == 1.0);
  CHECK(g(24, 1) == 1.0);
  CHECK(g(1 * 5 + 3, 0) == -0.5);
  CHECK(g(1 * 5 + 3, 1) == 0.5);
}

TEST_CASE("grid MSE") {
  auto p = make_problem("one_peak");
  SUBCASE("exact") { CHECK(grid_mse(p->exact(), *p) <= 1e-20); }
  SUBCASE("constant offset") {
    CHECK(grid_mse(shifted_exact(*p, 0.01), *p) == doctest::Approx(1e-4).epsilon(1e-10));
  }
  SUBCASE("random net against a double loop") {
    Rng rng(3);
    const Mlp net = Mlp::random({2, 16, 16, 1}, rng);
    long double acc = 0.0L;
    for (int i = 0; i < 256; ++i)
      for (int j = 0; j < 256; ++j) {
        PointBatch pt(1, 2);
        pt << -1.0 + 2.0 * i / 255.0, -1.0 + 2.0 * j / 255.0;
        const double u = net.evaluate(pt)(0, 0);
        const double e = std::exp(-1000.0 * (std::pow(pt(0, 0) - 0.5, 2) + std::pow(pt(0, 1) - 0.5, 2)));
        acc += static_cast<long double>((u - e) * (u - e));
      }
    const double naive = static_cast<double>(acc / (256.0L * 256.0L));
    CHECK(std::abs(grid_mse(net, *p) - naive) <= 1e-15 * std::max(1.0, naive));
  }
  SUBCASE("only two-dimensional problems") {
    auto nl = make_problem("nl10d");
    CHECK_THROWS_AS(grid_mse(nl->exact(), *nl), Error);
  }
}

TEST_CASE("relative L2 error") {
  auto p = make_problem("nl10d");
  Rng rng(4);
  const PointBatch test = p->sample_domain(2000, rng);
  CHECK(relative_l2_error(p->exact(), *p, test) == 0.0);
  CHECK(relative_l2_error(shifted_exact(*p, 0.0, 2.0), *p, test) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(relative_l2_error(shifted_exact(*p, 0.0, 0.0), *p, test) == doctest::Approx(1.0).epsilon(1e-14));
  Rng r1(9), r2(9);
  CHECK(relative_l2_error(shifted_exact(*p, 0.0, 0.5), *p, 500, r1) ==
        relative_l2_error(shifted_exact(*p, 0.0, 0.5), *p, p->sample_domain(500, r2)));
  testing::IdentityProblem zero;
  CHECK_THROWS_AS(relative_l2_error(zero.exact(), zero, test.leftCols(2)), Error);
  CHECK_THROWS_AS(relative_l2_error(p->exact(), *p, PointBatch(0, 10)), Error);
}

TEST_CASE("solution error follows the problem metric") {
  auto one = make_problem("one_peak");
  auto nl = make_problem("nl10d");
  Rng rng(5);
  const ClosureField off1 = shifted_exact(*one, 0.01);
  CHECK(solution_error(off1, *one, one->sample_domain(10, rng)) == doctest::Approx(1e-4).epsilon(1e-10));
  const PointBatch t = nl->sample_domain(100, rng);
  const ClosureField twice = shifted_exact(*nl, 0.0, 2.0);
  CHECK(solution_error(twice, *nl, t) == relative_l2_error(twice, *nl, t));
}

// ---- residual statistics -------------------------------------------------------

TEST_CASE("sample variance") {
  CHECK(sample_variance(ArrayXd::Constant(7, 3.5)) == 0.0);
  CHECK(sample_variance((ArrayXd(2) << 0.0, 2.0).finished()) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(sample_variance(ArrayXd::Ones(1)), Error);

  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    ArrayXd v(1000 + 37 * trial);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1e3 * rng.normal() + 5e3;
    long double mean = 0.0L;
    for (double x : v) mean += x;
    mean /= v.size();
    long double ss = 0.0L;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double naive = static_cast<double>(ss / (v.size() - 1));
    CHECK(sample_variance(v) == doctest::Approx(naive).epsilon(1e-12));
  }
}

TEST_CASE("residual variance of a constant residual is zero") {
  testing::IdentityProblem stub;
  const ClosureField c = ClosureField::from(2, 1, [](const auto*, auto* o) { o[0] = 0.7; });
  Rng rng(7);
  CHECK(residual_variance(c, stub, stub.sample_domain(100, rng)) <= 1e-28);
  CHECK_THROWS_AS(residual_variance(c, stub, stub.sample_domain(1, rng)), Error);
}

TEST_CASE("residual distribution weights") {
  const PointBatch pts = MatrixXd::Zero(4, 2);
  const ResidualDistribution c = residual_distribution(pts, ArrayXd::Constant(4, 2.0));
  CHECK((c.weights - 0.25).abs().maxCoeff() <= 1e-16);
  CHECK(c.z == doctest::Approx(8.0).epsilon(1e-15));  // mean 2 times area 4

  const ResidualDistribution two = residual_distribution(pts.topRows(2), (ArrayXd(2) << 1.0, 3.0).finished());
  CHECK(two.weights(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(two.weights(1) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(two.weights.sum() == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_WITH_AS(residual_distribution(pts, ArrayXd::Constant(4, 1e-16)), "degenerate residual", Error);

  testing::IdentityProblem stub;
  const ClosureField u = ClosureField::from(2, 1, [](const auto* x, auto* o) { o[0] = x[0]; });
  MatrixXd x(2, 2);
  x << 1.0, 0.0, std::sqrt(3.0), 0.5;
  const ResidualDistribution via = residual_to_distribution(u, stub, x);
  CHECK(via.weights(1) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("weighted resample matches the weights within multinomial bounds") {
  const int k = 5;
  MatrixXd pts(k, 1);
  for (int i = 0; i < k; ++i) pts(i, 0) = i;
  const ArrayXd r2 = (ArrayXd(k) << 1.0, 2.0, 3.0, 0.5, 3.5).finished();
  const ResidualDistribution d = residual_distribution(pts, r2);
  Rng rng(8);
  const int n = 100000;
  const PointBatch draws = weighted_resample(d, n, rng);
  REQUIRE(draws.rows() == n);
  for (int i = 0; i < k; ++i) {
    const double count = static_cast<double>((draws.col(0).array() == i).count());
    const double w = d.weights(i);
    CHECK(std::abs(count - n * w) <= 3.0 * std::sqrt(n * w * (1.0 - w)));
  }
}

// ---- Wasserstein -----------------------------------------------------------------

TEST_CASE("w1_exact_1d basic cases") {
  Rng rng(10);
  const ArrayXd x = uniform_column(rng, 12);
  const ArrayXd w = random_weights(rng, 12);
  CHECK(w1_exact_1d(x, w, x, w) == 0.0);
  const ArrayXd one = ArrayXd::Ones(1);
  CHECK(w1_exact_1d(ArrayXd::Zero(1), one, ArrayXd::Constant(1, -2.5), one) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK_THROWS_AS(w1_exact_1d(x, w * 2.0, x, w), Error);
  ArrayXd neg = w;
  neg(0) = -neg(0);
  CHECK_THROWS_AS(w1_exact_1d(x, neg, x, w), Error);
}

TEST_CASE("w1_exact_1d equals the transport LP") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const ArrayXd xa = uniform_column(rng, 20), xb = uniform_column(rng, 20, -0.5, 1.5);
    const ArrayXd wa = random_weights(rng, 20), wb = random_weights(rng, 20);
    CHECK(std::abs(w1_exact_1d(xa, wa, xb, wb) - testing::transport_lp(xa, wa, xb, wb)) <= 1e-9);
  }
}

TEST_CASE("sliced estimator with +-1 projections equals w1_exact_1d") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const int na = 50 + 10 * trial, nb = trial % 2 ? na : 73;
    const ArrayXd a = uniform_column(rng, na), b = uniform_column(rng, nb, -0.3, 1.2);
    const double sliced = sliced_wasserstein(column(a), column(b), plus_minus_one());
    const double exact = w1_exact_1d(a, ArrayXd::Constant(na, 1.0 / na), b, ArrayXd::Constant(nb, 1.0 / nb));
    CHECK(std::abs(sliced - exact) <= 1e-12);
  }
}

TEST_CASE("sliced Wasserstein basics") {
  Rng rng(13);
  const PointBatch a = testing::uniform_points(rng, 300, 3);
  CHECK(sliced_wasserstein(a, a, 16, 1) == 0.0);
  PointBatch p0(1, 1), p1(1, 1);
  p0 << 0.0;
  p1 << 1.0;
  CHECK(sliced_wasserstein(p0, p1, 4, 2) == doctest::Approx(1.0).epsilon(1e-15));

  Rng ra(100), rb(200);
  const PointBatch ua = testing::uniform_points(ra, 10000, 1), ub = testing::uniform_points(rb, 10000, 1);
  CHECK(sliced_wasserstein(ua, ub, 8, 3) <= 0.03);
  CHECK_THROWS_AS(sliced_wasserstein(PointBatch(0, 1), p1, 4, 2), Error);
}

TEST_CASE("sliced Wasserstein is a pseudometric") {
  Rng rng(14);
  const MatrixXd dirs = random_directions(2, 32, 5);
  CHECK((dirs.colwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-14);
  for (int trial = 0; trial < 10; ++trial) {
    const PointBatch a = testing::uniform_points(rng, 60, 2);
    const PointBatch b = testing::uniform_points(rng, 60, 2, -0.5, 1.0);
    const PointBatch c = testing::uniform_points(rng, 45, 2, -1.0, 0.3);
    const double ab = sliced_wasserstein(a, b, dirs), ba = sliced_wasserstein(b, a, dirs);
    CHECK(std::abs(ab - ba) <= 1e-15);
    CHECK(ab <= sliced_wasserstein(a, c, dirs) + sliced_wasserstein(c, b, dirs) + 1e-12);
  }
}

TEST_CASE("1D translation of separated batches shifts the distance by |c|") {
  Rng rng(15);
  const ArrayXd a = uniform_column(rng, 80, -1.0, -0.5), b = uniform_column(rng, 80, 0.5, 1.0);
  const double base = sliced_wasserstein(column(a), column(b), plus_minus_one());
  for (double c : {0.1, 0.4, 2.0}) {
    CHECK(sliced_wasserstein(column(a), column(b + c), plus_minus_one()) == doctest::Approx(base + c).epsilon(1e-13));
  }
}

TEST_CASE("equal-size empirical W1 uses order statistics") {
  const ArrayXd a = (ArrayXd(3) << 0.3, -1.0, 0.0).finished();
  const ArrayXd b = (ArrayXd(3) << 2.0, 0.5, 1.0).finished();
  // sorted: (-1, 0, 0.3) vs (0.5, 1, 2)
  CHECK(w1_empirical_1d(a, b) == doctest::Approx((1.5 + 1.0 + 1.7) / 3.0).epsilon(1e-15));
}

TEST_CASE("residual Wasserstein of a flat residual is sampling noise") {
  Rng rng(16);
  const PointBatch pts = testing::uniform_points(rng, 5000, 2);
  const PointBatch ref = testing::uniform_points(rng, 5000, 2);
  const ResidualDistribution flat = residual_distribution(pts, ArrayXd::Ones(5000));
  const double w_flat = residual_wasserstein(flat, ref, 5000, 32, 7);
  ArrayXd peaked(5000);
  for (int i = 0; i < 5000; ++i) peaked(i) = std::exp(-20.0 * (pts.row(i).array() - 0.5).square().sum());
  const double w_peak = residual_wasserstein(residual_distribution(pts, peaked), ref, 5000, 32, 7);
  CHECK(w_flat <= 0.05);
  CHECK(w_peak > 5.0 * w_flat);
  CHECK(residual_wasserstein(flat, ref, 5000, 32, 7) == w_flat);
}

// ---- optimal density -------------------------------------------------------------

TEST_CASE("grid spec") {
  GridSpec g;
  g.n = 5;
  CHECK(g.h() == 0.5);
  CHECK(g.quadrature().sum() == doctest::Approx(2.0).epsilon(1e-15));
  g.dim = 2;
  CHECK(g.size() == 25);
  CHECK(g.quadrature().sum() == doctest::Approx(4.0).epsilon(1e-15));
  const MatrixXd nodes = g.nodes();
  CHECK(nodes(1 * 5 + 3, 0) == -0.5);
  CHECK(nodes(1 * 5 + 3, 1) == 0.5);
}

TEST_CASE("oracle: constant residual gives the uniform density") {
  GridSpec g;
  const DensityOracle o = optimal_density_oracle(ArrayXd::Constant(g.size(), 3.0), 5.0, g);
  CHECK((o.p - 0.5).abs().maxCoeff() <= 1e-10);
  CHECK(o.lambda == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("oracle: cosine forcing in 1D") {
  GridSpec g;
  const MatrixXd x = g.nodes();
  const ArrayXd r2 = (std::numbers::pi * x.col(0).array()).cos();
  for (double beta : {5.0, 10.0, 20.0}) {
    const DensityOracle o = optimal_density_oracle(r2, beta, g);
    const ArrayXd want = r2 / (2.0 * beta * std::numbers::pi * std::numbers::pi) + 0.5;
    CHECK((o.p - want).abs().maxCoeff() <= 1e-6);
    CHECK(o.pde_residual <= 1e-8);
    CHECK(o.flux <= 1e-10);
    CHECK(std::abs(o.mass - 1.0) <= 1e-10);
  }
}

TEST_CASE("oracle beats mass-preserving perturbations") {
  GridSpec g;
  g.n = 401;
  const MatrixXd x = g.nodes();
  ArrayXd r2(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) r2(i) = 1.0 + 50.0 * std::exp(-40.0 * std::pow(x(i, 0) - 0.3, 2));
  const double beta = 5.0;
  const DensityOracle o = optimal_density_oracle(r2, beta, g);
  CHECK(o.pde_residual <= 1e-8);
  const double best = density_functional(o.p, r2, beta, g);
  Rng rng(17);
  int beaten = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ArrayXd dp = ArrayXd::Zero(g.size());
    for (int k = 1; k <= 4; ++k) dp += 0.02 * rng.normal() * (k * std::numbers::pi * x.col(0).array()).cos();
    // the trapezoid integrates these cosines to zero, so the mass is unchanged
    CHECK(std::abs((g.quadrature() * dp).sum()) <= 1e-12);
    if (density_functional(o.p + dp, r2, beta, g) < best) ++beaten;
  }
  CHECK(beaten == 100);
}

TEST_CASE("oracle in 2D") {
  GridSpec g;
  g.dim = 2;
  g.n = 201;
  const MatrixXd x = g.nodes();
  ArrayXd r2(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i)
    r2(i) = std::exp(-10.0 * ((x(i, 0) - 0.5) * (x(i, 0) - 0.5) + (x(i, 1) - 0.5) * (x(i, 1) - 0.5)));
  const DensityOracle o = optimal_density_oracle(r2, 10.0, g);
  CHECK(o.pde_residual <= 1e-8);
  CHECK(o.flux <= 1e-10);
  CHECK(std::abs(o.mass - 1.0) <= 1e-10);
  // the density leans toward the residual peak
  Eigen::Index top = 0;
  o.p.maxCoeff(&top);
  CHECK(x(top, 0) > 0.0);
  CHECK(x(top, 1) > 0.0);

  const double best = density_functional(o.p, r2, 10.0, g);
  Rng rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 3, l = trial % 2;
    const ArrayXd dp = 0.01 * rng.normal() * (k * std::numbers::pi * x.col(0).array()).cos() *
                       (l * std::numbers::pi * x.col(1).array()).cos();
    CHECK(density_functional(o.p + dp, r2, 10.0, g) < best);
  }
}

TEST_CASE("oracle rejects bad input") {
  GridSpec g;
  CHECK_THROWS_AS(optimal_density_oracle(ArrayXd::Ones(g.size()), 0.0, g), Error);
  CHECK_THROWS_AS(optimal_density_oracle(ArrayXd::Ones(10), 1.0, g), Error);
  g.dim = 3;
  CHECK_THROWS_AS(optimal_density_oracle(ArrayXd::Ones(8), 1.0, g), Error);
}

// ---- Lipschitz bound ---------------------------------------------------------------

TEST_CASE("Lipschitz density bound") {
  CHECK(lipschitz_density_bound(1.0, 2.0, 2.0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(lipschitz_density_bound(0.0, 3.0, 1.0) == 1.0);
  CHECK_THROWS_AS(lipschitz_density_bound(1.0, 0.0, 1.0), Error);

  Rng rng(19);
  const PointBatch pts = testing::uniform_points(rng, 500, 2);
  const LipschitzCheck id = check_density_bound(testing::identity_flow(2), pts);
  CHECK(id.k_hat <= 1e-12);
  CHECK(id.p_max == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(id.bound == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(id.holds);

  const LipschitzCheck bent = check_density_bound(testing::bent_flow(2, 3, 0.3), pts);
  CHECK(bent.k_hat > 0.0);
  CHECK(bent.holds);
}
