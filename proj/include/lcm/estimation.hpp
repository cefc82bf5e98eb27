#pragma once

// Minimum phi-divergence estimation: theta_hat = argmin D_phi(p_hat, p(theta)).
// The maximum likelihood estimator is the power(0) member.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lcm/divergence.hpp"
#include "lcm/model.hpp"
#include "lcm/optimize.hpp"
#include "lcm/rng.hpp"

namespace lcm {

struct FitOptions {
  int starts = 20;
  double init_scale = 1.0;
  double grad_tol = 1e-8;
  int max_iters = 500;
  std::uint64_t seed = 0;
  // Deterministic starting points tried before the random ones; each counts
  // towards `starts`.
  std::vector<Vector> initial_points;
  int threads = 1;

  void validate() const {
    if (starts < 1) {
      throw std::invalid_argument("fit options: starts must be at least 1");
    }
    if (!(init_scale > 0.0) || !(grad_tol > 0.0) || max_iters < 1) {
      throw std::invalid_argument("fit options: tolerances must be positive");
    }
  }
};

struct StartTrace {
  int start = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

struct FitResult {
  PhiSpec spec;
  Theta theta_hat;
  double objective = kInf;
  double grad_norm = kInf;
  bool converged = false;
  int best_start = -1;
  std::vector<StartTrace> trace;
  LatentParams latent;
  ManifestDistribution manifest;
  int rank = 0;
  // Set when empty cells made some terms infinite (phi(0) = inf) and the fit
  // minimized the remaining finite part.
  bool dropped_infinite_terms = false;
};

struct ObjectiveValue {
  double value = 0.0;
  Vector gradient;
  bool infinite_terms = false;
};

namespace detail {

inline void check_counts(const ModelDesign& design, const ObservedCounts& counts) {
  if (counts.n.size() != design.n_patterns()) {
    throw std::invalid_argument("counts: expected " +
                                std::to_string(design.n_patterns()) +
                                " pattern cells, got " +
                                std::to_string(counts.n.size()));
  }
  if (counts.N <= 0) {
    throw std::invalid_argument("counts: total sample size must be positive");
  }
}

// Value of sum_nu p_nu phi(p_hat_nu / p_nu) and its gradient
//
//   dD/dtheta = sum_nu [phi(x_nu) - x_nu phi'(x_nu)] dp_nu/dtheta,
//   x_nu = p_hat_nu / p_nu.
//
// With drop_infinite set, cells whose term is +inf are left out of both.
inline ObjectiveValue divergence_objective(const ModelDesign& design,
                                          const Vector& p_hat,
                                          const PhiSpec& spec,
                                          const Theta& theta,
                                          bool drop_infinite) {
  const ManifestDistribution md = manifest_distribution(design, theta);
  const auto cells = p_hat.size();
  ObjectiveValue out;
  Vector weight(cells);
  double value = 0.0;
  for (Eigen::Index c = 0; c < cells; ++c) {
    const double p = md.p[c];
    const double term = divergence_term(p_hat[c], p, spec);
    if (std::isinf(term)) {
      out.infinite_terms = true;
      weight[c] = 0.0;
      if (drop_infinite) {
        continue;
      }
      value = kInf;
      continue;
    }
    value += term;
    weight[c] = p > 0.0 ? spec.weight_derivative(p_hat[c] / p) : 0.0;
  }
  out.value = value;
  if (std::isinf(value)) {
    out.gradient = Vector::Constant(design.n_params(),
                                    std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  out.gradient = manifest_jacobian(design, theta).transpose() * weight;
  return out;
}

}  // namespace detail

// D_phi(p_hat, p(theta)) and its analytic gradient. An infinite objective
// (empty cells with phi(0) = inf) is reported as value = +inf and a NaN
// gradient.
inline ObjectiveValue objective_and_gradient(const ModelDesign& design,
                                             const ObservedCounts& counts,
                                             const PhiSpec& spec,
                                             const Theta& theta) {
  detail::check_counts(design, counts);
  return detail::divergence_objective(design, counts.proportions(), spec, theta,
                                      false);
}

// Class order used when comparing fits: decreasing w_j, ties broken by
// decreasing p_j1. Returns the class indices in canonical order.
inline std::vector<int> canonical_class_order(const LatentParams& lp) {
  std::vector<int> order(static_cast<std::size_t>(lp.w.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (lp.w[a] != lp.w[b]) {
      return lp.w[a] > lp.w[b];
    }
    return lp.P(a, 0) > lp.P(b, 0);
  });
  return order;
}

inline LatentParams canonicalize(const LatentParams& lp) {
  const auto order = canonical_class_order(lp);
  LatentParams out{Vector(lp.w.size()), Matrix(lp.P.rows(), lp.P.cols())};
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out.w[jj] = lp.w[order[j]];
    out.P.row(jj) = lp.P.row(order[j]);
  }
  return out;
}

inline FitResult fit(const ModelDesign& design, const ObservedCounts& counts,
                     const PhiSpec& spec, const FitOptions& options = {}) {
  design.validate();
  detail::check_counts(design, counts);
  options.validate();

  const Vector p_hat = counts.proportions();
  const int n = design.n_params();
  const int starts = options.starts;

  std::vector<Vector> x0(static_cast<std::size_t>(starts));
  const Philox4x32 master(options.seed);
  for (int s = 0; s < starts; ++s) {
    const auto su = static_cast<std::size_t>(s);
    if (su < options.initial_points.size()) {
      if (options.initial_points[su].size() != n) {
        throw std::invalid_argument("fit options: initial point has wrong length");
      }
      x0[su] = options.initial_points[su];
      continue;
    }
    Philox4x32 gen = master.split(static_cast<std::uint64_t>(s));
    x0[su].resize(n);
    for (int i = 0; i < n; ++i) {
      x0[su][i] = options.init_scale * standard_normal(gen);
    }
  }

  BfgsOptions bopt;
  bopt.grad_tol = options.grad_tol;
  bopt.max_iters = options.max_iters;

  std::vector<BfgsResult> runs(static_cast<std::size_t>(starts));
  std::vector<char> dropped(static_cast<std::size_t>(starts), 0);
  auto run_start = [&](int s) {
    const auto su = static_cast<std::size_t>(s);
    bool any_dropped = false;
    auto fg = [&](const Vector& x, Vector& grad) {
      ObjectiveValue ov = detail::divergence_objective(
          design, p_hat, spec, Theta::from_flat(design, x), true);
      any_dropped = any_dropped || ov.infinite_terms;
      grad = std::move(ov.gradient);
      return ov.value;
    };
    runs[su] = minimize_bfgs(fg, x0[su], bopt);
    dropped[su] = any_dropped ? 1 : 0;
  };

  const int threads = std::max(1, std::min(options.threads, starts));
  if (threads == 1) {
    for (int s = 0; s < starts; ++s) {
      run_start(s);
    }
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int tid = 0; tid < threads; ++tid) {
      pool.emplace_back([&, tid] {
        for (int s = tid; s < starts; s += threads) {
          run_start(s);
        }
      });
    }
    for (auto& th : pool) {
      th.join();
    }
  }

  FitResult result;
  result.spec = spec;
  int best_any = -1;
  for (int s = 0; s < starts; ++s) {
    const auto& r = runs[static_cast<std::size_t>(s)];
    result.trace.push_back(
        {s, r.f, r.grad_norm, r.iterations, r.converged, r.message});
    if (r.converged && (result.best_start < 0 ||
                        r.f < runs[static_cast<std::size_t>(result.best_start)].f)) {
      result.best_start = s;
    }
    if (std::isfinite(r.f) &&
        (best_any < 0 || r.f < runs[static_cast<std::size_t>(best_any)].f)) {
      best_any = s;
    }
  }
  result.converged = result.best_start >= 0;
  const int chosen = result.converged ? result.best_start : best_any;
  if (chosen < 0) {
    return result;
  }
  const auto& best = runs[static_cast<std::size_t>(chosen)];
  if (!result.converged) {
    result.best_start = chosen;
  }
  result.theta_hat = Theta::from_flat(design, best.x);
  result.objective = std::max(0.0, best.f);
  result.grad_norm = best.grad_norm;
  result.latent = latent_params(design, result.theta_hat);
  result.manifest = manifest_distribution(design, result.theta_hat);
  result.rank = jacobian_rank(design, result.theta_hat);
  result.dropped_infinite_terms = dropped[static_cast<std::size_t>(chosen)] != 0;
  return result;
}

// Maximum likelihood fit, i.e. fit() with power(0). Also checks the identity
// log L(theta) + N * D_KL(p_hat, p(theta)) = const at the optimum.
inline FitResult fit_mle(const ModelDesign& design, const ObservedCounts& counts,
                         const FitOptions& options = {}) {
  FitResult r = fit(design, counts, PhiSpec::power(0.0), options);
  if (r.converged) {
    double constant = std::lgamma(static_cast<double>(counts.N) + 1.0);
    for (auto nc : counts.n) {
      constant -= std::lgamma(static_cast<double>(nc) + 1.0);
      if (nc > 0) {
        constant += static_cast<double>(nc) *
                    std::log(static_cast<double>(nc) / static_cast<double>(counts.N));
      }
    }
    const double lhs = log_likelihood(counts, r.manifest) +
                       static_cast<double>(counts.N) *
                           kl_divergence(counts.proportions(), r.manifest.p);
    if (std::abs(lhs - constant) > 1e-6 * std::max(1.0, std::abs(constant))) {
      throw std::logic_error("fit_mle: likelihood / Kullback-Leibler identity violated");
    }
  }
  return r;
}

}  // namespace lcm
