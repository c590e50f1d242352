#pragma once

#include <cmath>

namespace dope {

// Forward-mode dual number: value + tangent, chain rule by operator overloads.
struct Dual {
  double v = 0.0;
  double t = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}
  Dual(double value, double tangent) : v(value), t(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.t + b.t}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.t - b.t}; }
inline Dual operator-(Dual a) { return {-a.v, -a.t}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.t * b.v + a.v * b.t}; }
inline Dual operator/(Dual a, Dual b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, (a.t - a.v * b.t * inv) * inv};
}

inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.t * e};
}
inline Dual log(Dual a) { return {std::log(a.v), a.t / a.v}; }
inline Dual log1p(Dual a) { return {std::log1p(a.v), a.t / (1.0 + a.v)}; }

// Stable logistic sigmoid.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Dual sigmoid(Dual a) {
  const double s = sigmoid(a.v);
  return {s, a.t * s * (1.0 - s)};
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline Dual softplus(Dual a) { return {softplus(a.v), a.t * sigmoid(a.v)}; }

}  // namespace dope
