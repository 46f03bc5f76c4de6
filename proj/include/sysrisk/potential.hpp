#pragma once

#include "sysrisk/error.hpp"

namespace sysrisk {

/// The bistable potential V(x) = x^4/4 - x^2/2 with wells at +-1 and a barrier at 0.
///
/// Only derivatives up to fourth order exist as methods; V'''' is the constant 6.
struct QuarticDoubleWell {
  template <class T>
  static constexpr T value(const T& x) { return x * x * x * x / 4.0 - x * x / 2.0; }

  template <class T>
  static constexpr T d1(const T& x) { return x * x * x - x; }

  template <class T>
  static constexpr T d2(const T& x) { return 3.0 * x * x - 1.0; }

  template <class T>
  static constexpr T d3(const T& x) { return 6.0 * x; }

  template <class T>
  static constexpr T d4(const T&) { return T(6.0); }

  static double eval_derivative(int order, double x) {
    switch (order) {
    case 0: return value(x);
    case 1: return d1(x);
    case 2: return d2(x);
    case 3: return d3(x);
    case 4: return d4(x);
    default: throw InvalidArgument("potential derivative order must be in 0..4");
    }
  }
};

using Potential = QuarticDoubleWell;

} // namespace sysrisk
