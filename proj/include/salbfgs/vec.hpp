#pragma once

#include <cmath>
#include <cstddef>

#include "salbfgs/types.hpp"

namespace salbfgs {

inline double dot(const ParameterVector& a, const ParameterVector& b) {
  if (a.size() != b.size())
    throw dimension_error("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const ParameterVector& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

inline double norm_inf(const ParameterVector& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::fabs(v));
  return m;
}

// a += c * b
inline void axpy(ParameterVector& a, double c, const ParameterVector& b) {
  if (a.size() != b.size())
    throw dimension_error("axpy: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += c * b[i];
}

inline bool all_finite(const ParameterVector& a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace salbfgs
