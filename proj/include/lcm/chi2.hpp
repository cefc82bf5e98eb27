#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lcm {

namespace detail {

// Regularized lower incomplete gamma P(a, x) by its power series; converges
// quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) {
      break;
    }
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by the Legendre continued
// fraction (modified Lentz); used for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) {
      d = tiny;
    }
    c = b + an / c;
    if (std::abs(c) < tiny) {
      c = tiny;
    }
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-17) {
      break;
    }
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

inline double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) {
    throw std::domain_error("gamma_q: requires a > 0 and x >= 0");
  }
  if (x == 0.0) {
    return 1.0;
  }
  if (std::isinf(x)) {
    return 0.0;
  }
  if (x < a + 1.0) {
    return 1.0 - detail::gamma_p_series(a, x);
  }
  return detail::gamma_q_fraction(a, x);
}

inline double gamma_p(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) {
    throw std::domain_error("gamma_p: requires a > 0 and x >= 0");
  }
  if (x == 0.0) {
    return 0.0;
  }
  if (std::isinf(x)) {
    return 1.0;
  }
  if (x < a + 1.0) {
    return detail::gamma_p_series(a, x);
  }
  return 1.0 - detail::gamma_q_fraction(a, x);
}

// Upper tail P(X > x) for X ~ chi-square(dof).
inline double chi2_sf(double x, int dof) {
  if (dof < 1) {
    throw std::domain_error("chi2_sf: dof must be at least 1");
  }
  if (std::isnan(x)) {
    throw std::domain_error("chi2_sf: x is NaN");
  }
  if (x <= 0.0) {
    return 1.0;
  }
  return gamma_q(0.5 * dof, 0.5 * x);
}

inline double chi2_cdf(double x, int dof) {
  if (dof < 1) {
    throw std::domain_error("chi2_cdf: dof must be at least 1");
  }
  if (x <= 0.0) {
    return 0.0;
  }
  return gamma_p(0.5 * dof, 0.5 * x);
}

// x with P(X <= x) = prob, by bisection on the bracketed upper tail.
inline double chi2_quantile(double prob, int dof) {
  if (!(prob >= 0.0 && prob < 1.0)) {
    throw std::domain_error("chi2_quantile: prob must lie in [0, 1)");
  }
  if (dof < 1) {
    throw std::domain_error("chi2_quantile: dof must be at least 1");
  }
  if (prob == 0.0) {
    return 0.0;
  }
  const double tail = 1.0 - prob;
  double lo = 0.0;
  double hi = static_cast<double>(dof) + 10.0;
  while (chi2_sf(hi, dof) > tail) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_sf(mid, dof) > tail) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace lcm
