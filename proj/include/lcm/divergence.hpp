#pragma once

// Phi-divergences between finite distributions.
//
// Argument convention: D_phi(p, q) = sum_i q_i phi(p_i / q_i). The SECOND
// argument weights the sum. With p = empirical proportions and q = model
// probabilities this is the form every estimator and test statistic in this
// library uses.
//
// Boundary conventions for a term with weight q_i:
//   q_i = 0, p_i = 0  ->  0
//   q_i = 0, p_i > 0  ->  p_i * lim_{x->inf} phi(x) / x
//   q_i > 0, p_i = 0  ->  q_i * phi(0)
// Infinite terms give an infinite divergence; no exception is raised.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace lcm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Member of the Cressie-Read power family:
//   phi_a(x) = (x^(a+1) - x - a(x-1)) / (a(a+1))   a != 0, -1
//            = x log x - x + 1                     a = 0
//            = -log x + x - 1                      a = -1
struct PowerPhi {
  double a = 0.0;
};

// User-supplied convex phi with phi(1) = 0.
struct CustomPhi {
  std::string name;
  std::function<double(double)> phi;
  std::function<double(double)> dphi;
  std::function<double(double)> d2phi;
  double slope_at_infinity = kInf;  // lim_{x->inf} phi(x) / x
};

class PhiSpec {
public:
  PhiSpec() : impl_(PowerPhi{0.0}) {}
  PhiSpec(PowerPhi p) : impl_(p) {}  // NOLINT(google-explicit-constructor)
  PhiSpec(CustomPhi c) : impl_(std::move(c)) {
    const auto& cp = std::get<CustomPhi>(impl_);
    if (!cp.phi || !cp.dphi || !cp.d2phi) {
      throw std::invalid_argument("custom phi: phi, phi' and phi'' are required");
    }
  }

  static PhiSpec power(double a) {
    if (!std::isfinite(a)) {
      throw std::invalid_argument("power phi: index must be finite");
    }
    return PhiSpec(PowerPhi{a});
  }

  bool is_power() const { return std::holds_alternative<PowerPhi>(impl_); }
  double power_index() const { return std::get<PowerPhi>(impl_).a; }

  std::string describe() const {
    if (is_power()) {
      std::ostringstream os;
      os.precision(17);
      os << "power:a=" << power_index();
      return os.str();
    }
    return "custom:" + std::get<CustomPhi>(impl_).name;
  }

  double operator()(double x) const {
    check_domain(x);
    if (const auto* p = std::get_if<PowerPhi>(&impl_)) {
      return power_phi(p->a, x);
    }
    return std::get<CustomPhi>(impl_).phi(x);
  }

  double derivative(double x) const {
    check_domain(x);
    if (const auto* p = std::get_if<PowerPhi>(&impl_)) {
      const double a = p->a;
      if (a == 0.0) {
        return std::log(x);
      }
      if (a == -1.0) {
        return 1.0 - 1.0 / x;
      }
      return std::expm1(a * std::log(x)) / a;
    }
    return std::get<CustomPhi>(impl_).dphi(x);
  }

  double second_derivative(double x) const {
    check_domain(x);
    if (const auto* p = std::get_if<PowerPhi>(&impl_)) {
      return std::pow(x, p->a - 1.0);
    }
    return std::get<CustomPhi>(impl_).d2phi(x);
  }

  // Equals 1 for every power-family member.
  double curvature_at_one() const { return second_derivative(1.0); }

  double slope_at_infinity() const {
    if (const auto* p = std::get_if<PowerPhi>(&impl_)) {
      return p->a >= 0.0 ? kInf : -1.0 / p->a;
    }
    return std::get<CustomPhi>(impl_).slope_at_infinity;
  }

  double at_zero() const { return (*this)(0.0); }

  // phi(x) - x phi'(x): derivative of q phi(p/q) with respect to q.
  double weight_derivative(double x) const {
    if (x == 0.0) {
      return at_zero();
    }
    return (*this)(x) - x * derivative(x);
  }

private:
  static void check_domain(double x) {
    if (!(x >= 0.0)) {
      throw std::domain_error("phi: argument must be nonnegative");
    }
  }

  // Written around u = x - 1 so the cancellation near x = 1 costs one
  // power of u rather than two.
  static double power_phi(double a, double x) {
    const double u = x - 1.0;
    if (a == 0.0) {
      if (x == 0.0) {
        return 1.0;
      }
      return x * std::log1p(u) - u;
    }
    if (a == -1.0) {
      if (x == 0.0) {
        return kInf;
      }
      return u - std::log1p(u);
    }
    const double b = a + 1.0;
    if (x == 0.0) {
      return b > 0.0 ? 1.0 / b : kInf;
    }
    return (std::expm1(b * std::log1p(u)) - b * u) / (a * b);
  }

  std::variant<PowerPhi, CustomPhi> impl_;
};

namespace detail {

inline void check_distribution(const Eigen::VectorXd& v, const char* what,
                               double tol = 1e-9) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] < 0.0) {
      throw std::domain_error(std::string(what) +
                              ": entries must be finite and nonnegative");
    }
    sum += v[i];
  }
  if (std::abs(sum - 1.0) > tol) {
    throw std::domain_error(std::string(what) + ": entries must sum to 1");
  }
}

// Single term q phi(p/q) with the boundary conventions.
inline double divergence_term(double p, double q, const PhiSpec& spec) {
  if (q == 0.0) {
    if (p == 0.0) {
      return 0.0;
    }
    const double slope = spec.slope_at_infinity();
    return std::isinf(slope) ? kInf : p * slope;
  }
  const double v = spec(p / q);
  return std::isinf(v) ? kInf : q * v;
}

}  // namespace detail

inline double phi_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                             const PhiSpec& spec) {
  if (p.size() != q.size()) {
    throw std::domain_error("phi_divergence: length mismatch");
  }
  detail::check_distribution(p, "phi_divergence: first argument");
  detail::check_distribution(q, "phi_divergence: second argument");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    sum += detail::divergence_term(p[i], q[i], spec);
  }
  // Jensen gives sum >= 0 exactly; only roundoff can push it below.
  return sum < 0.0 ? 0.0 : sum;
}

// sum_i p_hat_i log(p_hat_i / q_i)
inline double kl_divergence(const Eigen::VectorXd& p_hat, const Eigen::VectorXd& q) {
  return phi_divergence(p_hat, q, PhiSpec::power(0.0));
}

struct IdentityH {};
struct RenyiH {
  double a = 2.0;
};
struct SharmaMittalH {
  double a = 2.0;
  double b = 2.0;
};
struct BhattacharyyaH {};

// Increasing transform h with h(0) = 0 and h'(0) > 0 applied to a divergence.
class HSpec {
public:
  HSpec() : impl_(IdentityH{}) {}

  static HSpec identity() { return HSpec(IdentityH{}); }
  static HSpec renyi(double a) {
    if (!std::isfinite(a) || a == 0.0 || a == 1.0) {
      throw std::invalid_argument("renyi h: requires a != 0, 1");
    }
    return HSpec(RenyiH{a});
  }
  static HSpec sharma_mittal(double a, double b) {
    if (!std::isfinite(a) || !std::isfinite(b) || a == 1.0 || b == 1.0) {
      throw std::invalid_argument("sharma-mittal h: requires a, b != 1");
    }
    if (!(a > 0.0)) {
      throw std::invalid_argument("sharma-mittal h: h'(0) = a must be positive");
    }
    return HSpec(SharmaMittalH{a, b});
  }
  static HSpec bhattacharyya() { return HSpec(BhattacharyyaH{}); }

  bool is_identity() const { return std::holds_alternative<IdentityH>(impl_); }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    if (std::holds_alternative<IdentityH>(impl_)) {
      os << "identity";
    } else if (const auto* r = std::get_if<RenyiH>(&impl_)) {
      os << "renyi:a=" << r->a;
    } else if (const auto* s = std::get_if<SharmaMittalH>(&impl_)) {
      os << "sharma-mittal:a=" << s->a << ",b=" << s->b;
    } else {
      os << "bhattacharyya";
    }
    return os.str();
  }

  double operator()(double x) const {
    if (!(x >= 0.0)) {
      throw std::domain_error("h: argument must be nonnegative");
    }
    if (std::holds_alternative<IdentityH>(impl_)) {
      return x;
    }
    if (const auto* r = std::get_if<RenyiH>(&impl_)) {
      const double c = r->a * (r->a - 1.0);
      if (!(c * x + 1.0 > 0.0)) {
        throw std::domain_error("renyi h: argument outside the domain");
      }
      return std::log1p(c * x) / c;
    }
    if (const auto* s = std::get_if<SharmaMittalH>(&impl_)) {
      const double c = s->a * (s->a - 1.0);
      if (!(c * x + 1.0 > 0.0)) {
        throw std::domain_error("sharma-mittal h: argument outside the domain");
      }
      const double e = (s->b - 1.0) / (s->a - 1.0);
      return std::expm1(e * std::log1p(c * x)) / (s->b - 1.0);
    }
    if (!(x < 1.0)) {
      throw std::domain_error("bhattacharyya h: requires x < 1");
    }
    return -std::log1p(-x);
  }

  double derivative_at_zero() const {
    if (const auto* s = std::get_if<SharmaMittalH>(&impl_)) {
      return s->a;
    }
    return 1.0;
  }

private:
  template <class T>
  explicit HSpec(T t) : impl_(t) {}

  std::variant<IdentityH, RenyiH, SharmaMittalH, BhattacharyyaH> impl_;
};

}  // namespace lcm
