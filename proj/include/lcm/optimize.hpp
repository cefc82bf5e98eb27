#pragma once

// BFGS on an unconstrained smooth objective with a strong-Wolfe line search
// (Nocedal & Wright, Algorithms 3.5, 3.6 and 6.1).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace lcm {

struct BfgsOptions {
  double grad_tol = 1e-8;
  int max_iters = 500;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

namespace detail {

struct LinePoint {
  double alpha;
  double f;
  double slope;  // directional derivative
  Eigen::VectorXd x;
  Eigen::VectorXd g;
};

// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db); falls back
// to bisection when the cubic is degenerate or leaves the bracket.
inline double cubic_step(double a, double fa, double da, double b, double fb,
                         double db) {
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  const double mid = 0.5 * (a + b);
  if (!(disc >= 0.0) || !std::isfinite(fb)) {
    return mid;
  }
  const double sign = (b > a) ? 1.0 : -1.0;
  const double d2 = sign * std::sqrt(disc);
  const double denom = db - da + 2.0 * d2;
  if (denom == 0.0) {
    return mid;
  }
  const double step = b - (b - a) * ((db + d2 - d1) / denom);
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(step) || step < lo + margin || step > hi - margin) {
    return mid;
  }
  return step;
}

}  // namespace detail

// fg(x, grad) returns f(x) and writes the gradient into grad.
template <class ObjectiveGradient>
BfgsResult minimize_bfgs(ObjectiveGradient&& fg, Eigen::VectorXd x0,
                         const BfgsOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const auto n = x0.size();

  BfgsResult res;
  VectorXd g(n);
  double f = fg(x0, g);
  VectorXd x = std::move(x0);
  if (!std::isfinite(f) || !g.allFinite()) {
    res.x = x;
    res.f = f;
    res.grad_norm = std::numeric_limits<double>::infinity();
    res.message = "objective not finite at the starting point";
    return res;
  }
  MatrixXd H = MatrixXd::Identity(n, n);
  bool fresh = true;

  auto evaluate = [&](double alpha, const VectorXd& dir) {
    detail::LinePoint pt{alpha, 0.0, 0.0, x + alpha * dir, VectorXd(n)};
    pt.f = fg(pt.x, pt.g);
    pt.slope = std::isfinite(pt.f) && pt.g.allFinite()
                   ? pt.g.dot(dir)
                   : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(pt.f)) {
      pt.f = std::numeric_limits<double>::infinity();
    }
    return pt;
  };

  int iter = 0;
  for (; iter < opt.max_iters; ++iter) {
    const double gnorm = g.norm();
    if (gnorm <= opt.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    VectorXd dir = -H * g;
    double slope0 = g.dot(dir);
    if (!(slope0 < 0.0)) {
      H.setIdentity();
      fresh = true;
      dir = -g;
      slope0 = -gnorm * gnorm;
    }

    // Bracketing phase.
    detail::LinePoint prev{0.0, f, slope0, x, g};
    double alpha = fresh ? std::min(1.0, 1.0 / gnorm) : 1.0;
    bool found = false;
    detail::LinePoint accepted = prev;
    detail::LinePoint lo = prev;
    detail::LinePoint hi = prev;
    bool zoom = false;
    for (int ls = 0; ls < opt.max_line_search; ++ls) {
      detail::LinePoint cur = evaluate(alpha, dir);
      if (!std::isfinite(cur.f) || std::isnan(cur.slope)) {
        alpha = 0.5 * (prev.alpha + alpha);
        if (alpha - prev.alpha < 1e-16) {
          break;
        }
        continue;
      }
      if (cur.f > f + opt.c1 * alpha * slope0 || (ls > 0 && cur.f >= prev.f)) {
        lo = prev;
        hi = std::move(cur);
        zoom = true;
        break;
      }
      if (std::abs(cur.slope) <= -opt.c2 * slope0) {
        accepted = std::move(cur);
        found = true;
        break;
      }
      if (cur.slope >= 0.0) {
        lo = std::move(cur);
        hi = prev;
        zoom = true;
        break;
      }
      prev = std::move(cur);
      alpha *= 2.0;
    }

    // Zoom phase.
    if (zoom) {
      for (int ls = 0; ls < opt.max_line_search; ++ls) {
        const double trial =
            detail::cubic_step(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f,
                               std::isnan(hi.slope) ? 0.0 : hi.slope);
        if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) {
          break;
        }
        detail::LinePoint cur = evaluate(trial, dir);
        if (!std::isfinite(cur.f) || std::isnan(cur.slope) ||
            cur.f > f + opt.c1 * trial * slope0 || cur.f >= lo.f) {
          hi = std::move(cur);
          continue;
        }
        if (std::abs(cur.slope) <= -opt.c2 * slope0) {
          accepted = std::move(cur);
          found = true;
          break;
        }
        if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) {
          hi = lo;
        }
        lo = std::move(cur);
      }
      // Accept a point with sufficient decrease even if curvature failed.
      if (!found && lo.alpha > 0.0 && lo.f < f) {
        accepted = lo;
        found = true;
      }
    }

    if (!found) {
      if (!fresh) {
        H.setIdentity();
        fresh = true;
        continue;
      }
      res.message = "line search failed";
      break;
    }

    const VectorXd s = accepted.x - x;
    const VectorXd y = accepted.g - g;
    x = std::move(accepted.x);
    g = std::move(accepted.g);
    f = accepted.f;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) {
        H *= sy / y.squaredNorm();
      }
      const double rho = 1.0 / sy;
      const VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((1.0 + rho * yHy) * rho) * (s * s.transpose()) -
           rho * (Hy * s.transpose() + s * Hy.transpose());
      fresh = false;
    }
  }
  if (iter == opt.max_iters && res.message.empty()) {
    res.message = "iteration limit reached";
  }
  res.x = std::move(x);
  res.f = f;
  res.grad_norm = g.norm();
  res.iterations = iter;
  if (res.grad_norm <= opt.grad_tol) {
    res.converged = true;
    if (res.message != "gradient tolerance reached") {
      res.message = "gradient tolerance reached";
    }
  }
  return res;
}

}  // namespace lcm
