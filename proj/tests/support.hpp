#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>

#include "aas/rng.hpp"

namespace testing {

inline double rel_err(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
  const double denom = std::max(b.matrix().norm(), 1e-300);
  return (a - b).matrix().norm() / denom;
}

inline Eigen::MatrixXd uniform_points(aas::Rng& rng, Eigen::Index n, Eigen::Index d, double lo = -1.0,
                                      double hi = 1.0) {
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d; ++k) x(i, k) = rng.uniform(lo, hi);
  return x;
}

// Central difference of a scalar function of one entry of `m`.
inline double central(Eigen::MatrixXd& m, Eigen::Index i, Eigen::Index j, double h,
                      const std::function<double()>& f) {
  const double keep = m(i, j);
  m(i, j) = keep + h;
  const double fp = f();
  m(i, j) = keep - h;
  const double fm = f();
  m(i, j) = keep;
  return (fp - fm) / (2.0 * h);
}

}  // namespace testing
