#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace aas {

/// tanh through the vectorised exp; Eigen's double tanh is scalar. Near zero a
/// short odd series replaces (1 - e) / (1 + e), which loses relative accuracy there.
/// Works in cache-sized blocks; `src` and `dst` may alias.
inline void fast_tanh_n(const double* src, double* dst, Eigen::Index n) {
  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    const Eigen::Map<const Eigen::ArrayXd> v(src + start, len);
    const Eigen::ArrayXd v2 = v.square();
    const Eigen::ArrayXd e = (-2.0 * v.abs()).exp();
    const Eigen::ArrayXd far = v.sign() * (1.0 - e) / (1.0 + e);
    const auto series = v * (1.0 + v2 * (-1.0 / 3.0 + v2 * (2.0 / 15.0 - v2 * (17.0 / 315.0))));
    Eigen::Map<Eigen::ArrayXd>(dst + start, len) = (v2 < 4e-4).select(series, far);
  }
}

template <class Derived>
Eigen::ArrayXXd fast_tanh(const Eigen::ArrayBase<Derived>& x) {
  Eigen::ArrayXXd out = x;
  fast_tanh_n(out.data(), out.data(), out.size());
  return out;
}

/// Column-major n x cols block with leading dimension `ld` into a packed n x cols output.
inline void fast_tanh_into(const double* src, double* dst, Eigen::Index n, Eigen::Index cols, Eigen::Index ld) {
  for (Eigen::Index c = 0; c < cols; ++c) fast_tanh_n(src + c * ld, dst + c * n, n);
}

}  // namespace aas
