#pragma once

// Goodness-of-fit and nested-model phi-divergence test statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcm/chi2.hpp"
#include "lcm/divergence.hpp"
#include "lcm/estimation.hpp"
#include "lcm/model.hpp"

namespace lcm {

// How the residual degrees of freedom 2^k - r - 1 pick r.
struct DofPolicy {
  enum class Kind { rank, nominal, fixed };
  Kind kind = Kind::rank;
  int value = 0;  // only for Kind::fixed: the dof itself

  static DofPolicy rank() { return {Kind::rank, 0}; }
  static DofPolicy nominal() { return {Kind::nominal, 0}; }
  static DofPolicy fixed(int dof) {
    if (dof < 1) {
      throw std::invalid_argument("dof override must be at least 1");
    }
    return {Kind::fixed, dof};
  }

  std::string describe() const {
    switch (kind) {
      case Kind::rank:
        return "rank";
      case Kind::nominal:
        return "nominal";
      case Kind::fixed:
        return "fixed:" + std::to_string(value);
    }
    return "rank";
  }
};

struct TestResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  double alpha = 0.05;
  double critical = 0.0;
  bool reject = false;
  PhiSpec phi1;
  PhiSpec phi2;
  HSpec h;
  std::string dof_policy;
  std::vector<std::string> warnings;
};

namespace detail {

inline void decide(TestResult& r) {
  if (!(r.alpha > 0.0 && r.alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1)");
  }
  if (std::isinf(r.statistic)) {
    r.p_value = 0.0;
    r.critical = r.dof > 0 ? chi2_quantile(1.0 - r.alpha, r.dof) : 0.0;
    r.reject = true;
    r.warnings.emplace_back("infinite statistic (empty cells); counted as a rejection");
    return;
  }
  if (r.dof == 0) {
    r.p_value = 1.0;
    r.critical = 0.0;
    r.reject = false;
    r.warnings.emplace_back("zero degrees of freedom (identical models)");
    return;
  }
  r.critical = chi2_quantile(1.0 - r.alpha, r.dof);
  r.p_value = chi2_sf(r.statistic, r.dof);
  r.reject = r.statistic > r.critical;
}

inline void require_converged(const FitResult& f, const char* what) {
  if (!f.converged) {
    throw std::runtime_error(std::string(what) + ": fit did not converge");
  }
}

}  // namespace detail

inline int resolve_gof_dof(const ModelDesign& design, int rank, const DofPolicy& policy) {
  const auto cells = static_cast<int>(design.n_patterns());
  int dof = 0;
  switch (policy.kind) {
    case DofPolicy::Kind::rank:
      dof = cells - rank - 1;
      break;
    case DofPolicy::Kind::nominal:
      dof = cells - design.n_params() - 1;
      break;
    case DofPolicy::Kind::fixed:
      dof = policy.value;
      break;
  }
  if (dof < 1) {
    throw std::invalid_argument("goodness of fit: non-positive degrees of freedom (" +
                                std::to_string(dof) + ")");
  }
  return dof;
}

// (2N / (phi1''(1) h'(0))) h(D_phi1(p_hat, p(theta_hat_phi2))).
inline TestResult gof_statistic_h(const ModelDesign& design, const ObservedCounts& counts,
                                  const PhiSpec& phi1, const HSpec& h,
                                  const FitResult& fit2, double alpha = 0.05,
                                  const DofPolicy& policy = {}) {
  detail::require_converged(fit2, "goodness of fit");
  detail::check_counts(design, counts);
  TestResult r;
  r.phi1 = phi1;
  r.phi2 = fit2.spec;
  r.h = h;
  r.alpha = alpha;
  r.dof_policy = policy.describe();
  r.dof = resolve_gof_dof(design, fit2.rank, policy);
  const double D = phi_divergence(counts.proportions(), fit2.manifest.p, phi1);
  const double scale = 2.0 * static_cast<double>(counts.N) /
                       (phi1.curvature_at_one() * h.derivative_at_zero());
  r.statistic = std::isinf(D) ? kInf : scale * h(D);
  if (fit2.dropped_infinite_terms) {
    r.warnings.emplace_back("estimator ignored infinite empty-cell terms");
  }
  detail::decide(r);
  return r;
}

// (2N / phi1''(1)) D_phi1(p_hat, p(theta_hat_phi2)).
inline TestResult gof_statistic(const ModelDesign& design, const ObservedCounts& counts,
                                const PhiSpec& phi1, const FitResult& fit2,
                                double alpha = 0.05, const DofPolicy& policy = {}) {
  return gof_statistic_h(design, counts, phi1, HSpec::identity(), fit2, alpha, policy);
}

// Model B is model A with the listed lambda / eta coordinates fixed at zero.
struct NestedPair {
  ModelDesign design_A;
  std::vector<int> drop_lambda;  // 0-based indices into lambda of A
  std::vector<int> drop_eta;     // 0-based indices into eta of A

  int h1() const { return design_A.n_params(); }
  int h2() const {
    return h1() - static_cast<int>(drop_lambda.size() + drop_eta.size());
  }

  void validate() const {
    design_A.validate();
    auto check = [](const std::vector<int>& idx, int size, const char* what) {
      std::set<int> seen;
      for (int i : idx) {
        if (i < 0 || i >= size || !seen.insert(i).second) {
          throw std::invalid_argument(std::string("nested pair: bad ") + what +
                                      " index " + std::to_string(i));
        }
      }
    };
    check(drop_lambda, design_A.t(), "lambda");
    check(drop_eta, design_A.u(), "eta");
    if (h2() < 1) {
      throw std::invalid_argument("nested pair: model B has no free parameters");
    }
  }

  // Free coordinates of A (flat order) that remain free in B.
  std::vector<int> kept_coordinates() const {
    std::vector<int> kept;
    const std::set<int> dl(drop_lambda.begin(), drop_lambda.end());
    const std::set<int> de(drop_eta.begin(), drop_eta.end());
    for (int r = 0; r < design_A.t(); ++r) {
      if (!dl.count(r)) {
        kept.push_back(r);
      }
    }
    for (int s = 0; s < design_A.u(); ++s) {
      if (!de.count(s)) {
        kept.push_back(design_A.t() + s);
      }
    }
    return kept;
  }

  ModelDesign design_B() const {
    validate();
    ModelDesign b;
    b.k = design_A.k;
    b.m = design_A.m;
    b.C = design_A.C;
    b.d = design_A.d;
    const std::set<int> dl(drop_lambda.begin(), drop_lambda.end());
    const std::set<int> de(drop_eta.begin(), drop_eta.end());
    for (int r = 0; r < design_A.t(); ++r) {
      if (!dl.count(r)) {
        b.Q.push_back(design_A.Q[static_cast<std::size_t>(r)]);
      }
    }
    std::vector<int> cols;
    for (int s = 0; s < design_A.u(); ++s) {
      if (!de.count(s)) {
        cols.push_back(s);
      }
    }
    b.V.resize(design_A.m, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      b.V.col(static_cast<Eigen::Index>(c)) = design_A.V.col(cols[c]);
    }
    return b;
  }

  Vector restrict_theta(const Vector& flat_A) const {
    const auto kept = kept_coordinates();
    Vector out(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t i = 0; i < kept.size(); ++i) {
      out[static_cast<Eigen::Index>(i)] = flat_A[kept[i]];
    }
    return out;
  }

  Vector embed_theta(const Vector& flat_B) const {
    const auto kept = kept_coordinates();
    Vector out = Vector::Zero(h1());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      out[kept[i]] = flat_B[static_cast<Eigen::Index>(i)];
    }
    return out;
  }
};

struct NestedFits {
  FitResult A;
  FitResult B;
};

// Fits A and B with phi2. B is warm-started from the restriction of A's
// estimate, and A is refitted from the embedding of B's estimate if the
// larger model came out worse.
inline NestedFits fit_nested(const NestedPair& pair, const ObservedCounts& counts,
                             const PhiSpec& phi2, const FitOptions& options = {}) {
  pair.validate();
  const ModelDesign design_B = pair.design_B();
  NestedFits out;
  out.A = fit(pair.design_A, counts, phi2, options);
  detail::require_converged(out.A, "nested test, model A");
  FitOptions ob = options;
  ob.initial_points.insert(ob.initial_points.begin(),
                           pair.restrict_theta(out.A.theta_hat.flat()));
  out.B = fit(design_B, counts, phi2, ob);
  detail::require_converged(out.B, "nested test, model B");
  if (out.A.objective > out.B.objective) {
    FitOptions oa = options;
    oa.initial_points.insert(oa.initial_points.begin(),
                             pair.embed_theta(out.B.theta_hat.flat()));
    FitResult again = fit(pair.design_A, counts, phi2, oa);
    if (again.converged && again.objective < out.A.objective) {
      out.A = std::move(again);
    }
  }
  return out;
}

namespace detail {

inline TestResult nested_base(const NestedPair& pair, const FitResult& A,
                              const FitResult& B, const PhiSpec& phi1, const HSpec& h,
                              double alpha) {
  require_converged(A, "nested test, model A");
  require_converged(B, "nested test, model B");
  TestResult r;
  r.phi1 = phi1;
  r.phi2 = A.spec;
  r.h = h;
  r.alpha = alpha;
  r.dof = pair.h1() - pair.h2();
  r.dof_policy = "h1-h2";
  return r;
}

}  // namespace detail

// S = (2N / (phi1''(1) h'(0))) [h(D(p_hat, p_B)) - h(D(p_hat, p_A))], ordered
// B minus A so that the likelihood-ratio case is nonnegative.
inline TestResult nested_S_h(const NestedPair& pair, const NestedFits& fits,
                             const ObservedCounts& counts, const PhiSpec& phi1,
                             const HSpec& h, double alpha = 0.05) {
  TestResult r = detail::nested_base(pair, fits.A, fits.B, phi1, h, alpha);
  const Vector p_hat = counts.proportions();
  const double DA = phi_divergence(p_hat, fits.A.manifest.p, phi1);
  const double DB = phi_divergence(p_hat, fits.B.manifest.p, phi1);
  const double scale = 2.0 * static_cast<double>(counts.N) /
                       (phi1.curvature_at_one() * h.derivative_at_zero());
  if (std::isinf(DA) || std::isinf(DB)) {
    r.statistic = std::isinf(DB) && !std::isinf(DA) ? kInf
                                                    : std::numeric_limits<double>::quiet_NaN();
    if (std::isnan(r.statistic)) {
      throw std::runtime_error("nested S: both divergences are infinite");
    }
  } else {
    r.statistic = scale * (h(DB) - h(DA));
  }
  if (r.statistic < 0.0) {
    r.warnings.emplace_back("negative S statistic (phi1 differs from phi2); reported unclamped");
  }
  detail::decide(r);
  return r;
}

// T = (2N / (phi1''(1) h'(0))) h(D(p_A, p_B)).
inline TestResult nested_T_h(const NestedPair& pair, const NestedFits& fits,
                             const ObservedCounts& counts, const PhiSpec& phi1,
                             const HSpec& h, double alpha = 0.05) {
  TestResult r = detail::nested_base(pair, fits.A, fits.B, phi1, h, alpha);
  const double D = phi_divergence(fits.A.manifest.p, fits.B.manifest.p, phi1);
  const double scale = 2.0 * static_cast<double>(counts.N) /
                       (phi1.curvature_at_one() * h.derivative_at_zero());
  r.statistic = std::isinf(D) ? kInf : scale * h(D);
  detail::decide(r);
  return r;
}

inline TestResult nested_S(const NestedPair& pair, const NestedFits& fits,
                           const ObservedCounts& counts, const PhiSpec& phi1,
                           double alpha = 0.05) {
  return nested_S_h(pair, fits, counts, phi1, HSpec::identity(), alpha);
}

inline TestResult nested_T(const NestedPair& pair, const NestedFits& fits,
                           const ObservedCounts& counts, const PhiSpec& phi1,
                           double alpha = 0.05) {
  return nested_T_h(pair, fits, counts, phi1, HSpec::identity(), alpha);
}

inline TestResult nested_S(const NestedPair& pair, const ObservedCounts& counts,
                           const PhiSpec& phi1, const PhiSpec& phi2,
                           const FitOptions& options = {}, double alpha = 0.05) {
  return nested_S(pair, fit_nested(pair, counts, phi2, options), counts, phi1, alpha);
}

inline TestResult nested_T(const NestedPair& pair, const ObservedCounts& counts,
                           const PhiSpec& phi1, const PhiSpec& phi2,
                           const FitOptions& options = {}, double alpha = 0.05) {
  return nested_T(pair, fit_nested(pair, counts, phi2, options), counts, phi1, alpha);
}

// A chain M1 > M2 > ... > Mm given as a base design (M1) and, per model, the
// cumulative set of base coordinates fixed at zero.
struct ModelChain {
  struct Member {
    std::string name;
    std::vector<int> drop_lambda;
    std::vector<int> drop_eta;
  };
  ModelDesign base;
  std::vector<Member> models;
  std::string note;

  void validate() const {
    base.validate();
    if (models.size() < 2) {
      throw std::invalid_argument("model chain: need at least two models");
    }
    for (std::size_t l = 0; l < models.size(); ++l) {
      NestedPair{base, models[l].drop_lambda, models[l].drop_eta}.validate();
      if (l == 0) {
        continue;
      }
      auto subset = [](std::vector<int> a, std::vector<int> b) {
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        return std::includes(b.begin(), b.end(), a.begin(), a.end());
      };
      const auto& prev = models[l - 1];
      const auto& cur = models[l];
      if (!subset(prev.drop_lambda, cur.drop_lambda) ||
          !subset(prev.drop_eta, cur.drop_eta) ||
          prev.drop_lambda.size() + prev.drop_eta.size() >=
              cur.drop_lambda.size() + cur.drop_eta.size()) {
        throw std::invalid_argument("model chain: " + cur.name +
                                    " is not strictly nested in " + prev.name);
      }
    }
  }

  ModelDesign design(std::size_t l) const {
    return NestedPair{base, models[l].drop_lambda, models[l].drop_eta}.design_B();
  }

  // Pair (M_l, M_{l+1}) expressed relative to M_l.
  NestedPair pair(std::size_t l) const {
    const NestedPair outer{base, models[l].drop_lambda, models[l].drop_eta};
    const NestedPair inner{base, models[l + 1].drop_lambda, models[l + 1].drop_eta};
    const auto kept_outer = outer.kept_coordinates();
    const auto kept_inner = inner.kept_coordinates();
    const std::set<int> kept_inner_set(kept_inner.begin(), kept_inner.end());
    NestedPair p{design(l), {}, {}};
    const int t_outer = p.design_A.t();
    for (std::size_t i = 0; i < kept_outer.size(); ++i) {
      if (kept_inner_set.count(kept_outer[i])) {
        continue;
      }
      const int local = static_cast<int>(i);
      if (local < t_outer) {
        p.drop_lambda.push_back(local);
      } else {
        p.drop_eta.push_back(local - t_outer);
      }
    }
    return p;
  }
};

enum class NestedStatistic { S, T };

struct SelectionResult {
  std::size_t selected = 0;  // 0-based index into the chain
  std::vector<FitResult> fits;
  std::vector<TestResult> trail;  // trail[l] tests M_{l+1} against M_l
};

// Tests M_{l+1} against M_l for l = 1, 2, ... and keeps M_l at the first
// rejection; keeps the last model if nothing is rejected.
inline SelectionResult sequential_selection(const ModelChain& chain,
                                            const ObservedCounts& counts,
                                            const PhiSpec& phi1, const PhiSpec& phi2,
                                            double alpha, NestedStatistic which,
                                            const FitOptions& options = {},
                                            const HSpec& h = HSpec::identity()) {
  chain.validate();
  SelectionResult out;
  out.selected = chain.models.size() - 1;
  for (std::size_t l = 0; l + 1 < chain.models.size(); ++l) {
    const NestedPair pair = chain.pair(l);
    NestedFits fits;
    if (l == 0) {
      fits = fit_nested(pair, counts, phi2, options);
      out.fits.push_back(fits.A);
    } else {
      fits.A = out.fits.back();
      FitOptions ob = options;
      ob.initial_points.insert(ob.initial_points.begin(),
                               pair.restrict_theta(fits.A.theta_hat.flat()));
      fits.B = fit(pair.design_B(), counts, phi2, ob);
      detail::require_converged(fits.B, "selection");
    }
    out.fits.push_back(fits.B);
    TestResult r = which == NestedStatistic::S
                       ? nested_S_h(pair, fits, counts, phi1, h, alpha)
                       : nested_T_h(pair, fits, counts, phi1, h, alpha);
    const bool rejected = r.reject;
    out.trail.push_back(std::move(r));
    if (rejected) {
      out.selected = l;
      break;
    }
  }
  return out;
}

}  // namespace lcm
