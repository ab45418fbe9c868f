#pragma once

#include <cmath>

namespace aas {

/// Second-order forward-mode number along one direction: value, first and
/// second directional derivative.
struct Dual2 {
  double v = 0.0, d = 0.0, dd = 0.0;

  Dual2() = default;
  Dual2(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  Dual2(double value, double first, double second) : v(value), d(first), dd(second) {}

  static Dual2 variable(double value) { return {value, 1.0, 0.0}; }
};

inline Dual2 operator+(Dual2 a, Dual2 b) { return {a.v + b.v, a.d + b.d, a.dd + b.dd}; }
inline Dual2 operator-(Dual2 a, Dual2 b) { return {a.v - b.v, a.d - b.d, a.dd - b.dd}; }
inline Dual2 operator-(Dual2 a) { return {-a.v, -a.d, -a.dd}; }
inline Dual2 operator*(Dual2 a, Dual2 b) { return {a.v * b.v, a.d * b.v + a.v * b.d, a.dd * b.v + 2.0 * a.d * b.d + a.v * b.dd}; }
inline Dual2 operator/(Dual2 a, Dual2 b) {
  const double inv = 1.0 / b.v;
  // q = a / b; q' = (a' - q b') / b; q'' = (a'' - 2 q' b' - q b'') / b
  const double q = a.v * inv;
  const double q1 = (a.d - q * b.d) * inv;
  const double q2 = (a.dd - 2.0 * q1 * b.d - q * b.dd) * inv;
  return {q, q1, q2};
}
inline Dual2& operator+=(Dual2& a, Dual2 b) { return a = a + b; }
inline Dual2& operator-=(Dual2& a, Dual2 b) { return a = a - b; }
inline Dual2& operator*=(Dual2& a, Dual2 b) { return a = a * b; }

// Elementwise map with f, f', f'' at the value.
inline Dual2 apply(Dual2 a, double f, double f1, double f2) { return {f, f1 * a.d, f2 * a.d * a.d + f1 * a.dd}; }

inline Dual2 exp(Dual2 a) {
  const double e = std::exp(a.v);
  return apply(a, e, e, e);
}
inline Dual2 log(Dual2 a) { return apply(a, std::log(a.v), 1.0 / a.v, -1.0 / (a.v * a.v)); }
inline Dual2 tanh(Dual2 a) {
  const double t = std::tanh(a.v);
  const double s = 1.0 - t * t;
  return apply(a, t, s, -2.0 * t * s);
}
inline Dual2 sqrt(Dual2 a) {
  const double r = std::sqrt(a.v);
  return apply(a, r, 0.5 / r, -0.25 / (r * a.v));
}

}  // namespace aas
