#pragma once

// Simulated size and power of the goodness-of-fit statistics.

#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lcm/chi2.hpp"
#include "lcm/divergence.hpp"
#include "lcm/estimation.hpp"
#include "lcm/inference.hpp"
#include "lcm/model.hpp"
#include "lcm/rng.hpp"

namespace lcm {

struct SimulationPlan {
  ModelDesign null_design;
  Matrix alt_Q;  // extra lambda column of the alternatives (m x k)
  std::vector<double> lambda8;
  Theta theta0;
  std::vector<std::int64_t> sample_sizes;
  std::vector<double> a_values;
  int replications = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  PhiSpec phi2 = PhiSpec::power(2.0 / 3.0);
  DofPolicy dof = DofPolicy::rank();
  FitOptions fit;  // initial_points is filled per replication with theta0
  int threads = 1;

  void validate() const {
    null_design.validate();
    if (alt_Q.rows() != null_design.m || alt_Q.cols() != null_design.k) {
      throw std::invalid_argument("plan: alt_Q must be m x k");
    }
    if (theta0.lambda.size() != null_design.t() || theta0.eta.size() != null_design.u()) {
      throw std::invalid_argument("plan: theta0 does not match the design");
    }
    if (sample_sizes.empty() || lambda8.empty()) {
      throw std::invalid_argument("plan: need at least one sample size and one lambda8");
    }
    for (auto n : sample_sizes) {
      if (n < 1) {
        throw std::invalid_argument("plan: sample sizes must be positive");
      }
    }
    if (replications < 1) {
      throw std::invalid_argument("plan: replications must be at least 1");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw std::invalid_argument("plan: alpha must lie in (0, 1)");
    }
    fit.validate();
  }

  // Null design with the alternative column appended as the last lambda.
  ModelDesign alternative_design() const {
    ModelDesign d = null_design;
    d.Q.push_back(alt_Q);
    return d;
  }

  Theta alternative_theta(double l8) const {
    Vector lam(theta0.lambda.size() + 1);
    lam << theta0.lambda, l8;
    return {lam, theta0.eta};
  }
};

struct SizePowerCell {
  std::int64_t N = 0;
  double a = 0.0;
  double lambda8 = 0.0;
  int rejections = 0;
  int replications = 0;  // valid replications (denominator)
  int failures = 0;      // fits that did not converge, excluded
  int infinite = 0;      // infinite statistics, counted as rejections
  double rate = 0.0;
  double ci_lo = 0.0;  // exact (Clopper-Pearson) 95%
  double ci_hi = 1.0;
  bool in_dale_band = false;
};

struct SizePowerTable {
  std::vector<SizePowerCell> cells;
  int dof = 0;
  std::string dof_policy;
  double critical = 0.0;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> sample_sizes;
  std::vector<double> a_values;
  std::vector<double> lambda8;

  const SizePowerCell& at(std::int64_t N, double a, double l8) const {
    for (const auto& c : cells) {
      if (c.N == N && c.a == a && c.lambda8 == l8) {
        return c;
      }
    }
    throw std::out_of_range("size/power table: no such cell");
  }
};

// Interval of simulated sizes a_hat with |logit(1 - a_hat) - logit(1 - alpha)| <= eps.
inline std::pair<double, double> dale_band(double alpha, double eps = 0.35) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::domain_error("dale_band: alpha must lie in (0, 1)");
  }
  const double l = std::log(alpha / (1.0 - alpha));
  auto inv = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  return {inv(l - eps), inv(l + eps)};
}

// Clopper-Pearson interval for x successes out of n at the given level.
inline std::pair<double, double> clopper_pearson(int x, int n, double level = 0.95) {
  if (n < 1 || x < 0 || x > n) {
    throw std::domain_error("clopper_pearson: need 0 <= x <= n and n >= 1");
  }
  using boost::math::binomial_distribution;
  const double tail = 0.5 * (1.0 - level);
  const double lo = x == 0 ? 0.0
                           : binomial_distribution<>::find_lower_bound_on_p(n, x, tail);
  const double hi = x == n ? 1.0
                           : binomial_distribution<>::find_upper_bound_on_p(n, x, tail);
  return {lo, hi};
}

// Central interval of rates X/n, X ~ Binomial(n, p0), with probability at
// least `level`.
inline std::pair<double, double> binomial_acceptance(double p0, int n, double level = 0.99) {
  if (n < 1 || !(p0 >= 0.0 && p0 <= 1.0)) {
    throw std::domain_error("binomial_acceptance: need n >= 1 and p0 in [0, 1]");
  }
  boost::math::binomial_distribution<> dist(n, p0);
  const double tail = 0.5 * (1.0 - level);
  double lo = 0.0;
  double hi = static_cast<double>(n);
  // Largest lo with P(X < lo) <= tail and smallest hi with P(X > hi) <= tail.
  for (int x = 0; x <= n; ++x) {
    if (boost::math::cdf(dist, x) > tail) {
      lo = x;
      break;
    }
  }
  for (int x = n; x >= 0; --x) {
    if (x == 0 || boost::math::cdf(dist, x - 1) < 1.0 - tail) {
      hi = x;
      break;
    }
  }
  return {lo / n, hi / n};
}

namespace detail {

struct ReplicationOutcome {
  bool failed = false;
  std::vector<double> statistic;  // per a
};

inline ReplicationOutcome simulate_one(const SimulationPlan& plan,
                                       const ManifestDistribution& truth, std::int64_t N,
                                       std::uint64_t stream) {
  Philox4x32 gen(plan.seed, stream);
  const ObservedCounts counts = sample_counts(truth, N, gen);
  FitOptions fo = plan.fit;
  fo.seed = gen.next_u64();
  fo.threads = 1;
  fo.initial_points.insert(fo.initial_points.begin(), plan.theta0.flat());
  const FitResult f = fit(plan.null_design, counts, plan.phi2, fo);
  ReplicationOutcome out;
  if (!f.converged) {
    out.failed = true;
    return out;
  }
  const Vector p_hat = counts.proportions();
  for (double a : plan.a_values) {
    const PhiSpec phi1 = PhiSpec::power(a);
    const double D = phi_divergence(p_hat, f.manifest.p, phi1);
    out.statistic.push_back(std::isinf(D) ? kInf
                                          : 2.0 * static_cast<double>(N) * D /
                                                phi1.curvature_at_one());
  }
  return out;
}

}  // namespace detail

inline int resolve_plan_dof(const SimulationPlan& plan) {
  const int rank = jacobian_rank(plan.null_design, plan.theta0);
  return resolve_gof_dof(plan.null_design, rank, plan.dof);
}

// Replication r of cell (n_idx, l_idx) draws from Philox stream
// (n_idx * |lambda8| + l_idx) * R + r, so results do not depend on threads.
inline SizePowerTable run_simulation(const SimulationPlan& plan) {
  plan.validate();
  SizePowerTable table;
  table.alpha = plan.alpha;
  table.seed = plan.seed;
  table.dof = resolve_plan_dof(plan);
  table.dof_policy = plan.dof.describe();
  table.critical = chi2_quantile(1.0 - plan.alpha, table.dof);
  table.sample_sizes = plan.sample_sizes;
  table.a_values = plan.a_values;
  table.lambda8 = plan.lambda8;
  const auto band = dale_band(plan.alpha);
  const ModelDesign alt = plan.alternative_design();
  const int R = plan.replications;
  const auto G = static_cast<std::uint64_t>(plan.lambda8.size());

  for (std::size_t ni = 0; ni < plan.sample_sizes.size(); ++ni) {
    const std::int64_t N = plan.sample_sizes[ni];
    for (std::size_t li = 0; li < plan.lambda8.size(); ++li) {
      const double l8 = plan.lambda8[li];
      const ManifestDistribution truth =
          manifest_distribution(alt, plan.alternative_theta(l8));
      std::vector<detail::ReplicationOutcome> outcomes(static_cast<std::size_t>(R));
      const std::uint64_t base = (ni * G + li) * static_cast<std::uint64_t>(R);
      auto work = [&](int r) {
        outcomes[static_cast<std::size_t>(r)] = detail::simulate_one(
            plan, truth, N, base + static_cast<std::uint64_t>(r));
      };
      const int threads = std::max(1, std::min(plan.threads, R));
      if (threads == 1) {
        for (int r = 0; r < R; ++r) {
          work(r);
        }
      } else {
        std::vector<std::thread> pool;
        for (int tid = 0; tid < threads; ++tid) {
          pool.emplace_back([&, tid] {
            for (int r = tid; r < R; r += threads) {
              work(r);
            }
          });
        }
        for (auto& th : pool) {
          th.join();
        }
      }
      for (std::size_t ai = 0; ai < plan.a_values.size(); ++ai) {
        SizePowerCell cell;
        cell.N = N;
        cell.a = plan.a_values[ai];
        cell.lambda8 = l8;
        for (const auto& o : outcomes) {
          if (o.failed) {
            ++cell.failures;
            continue;
          }
          ++cell.replications;
          const double T = o.statistic[ai];
          if (std::isinf(T)) {
            ++cell.infinite;
          }
          if (T > table.critical) {
            ++cell.rejections;
          }
        }
        if (cell.replications > 0) {
          cell.rate = static_cast<double>(cell.rejections) / cell.replications;
          std::tie(cell.ci_lo, cell.ci_hi) =
              clopper_pearson(cell.rejections, cell.replications, 0.95);
        }
        cell.in_dale_band = cell.rate >= band.first && cell.rate <= band.second;
        table.cells.push_back(cell);
      }
    }
  }
  return table;
}

// One CSV per sample size: lambda8, then the rejection rate for each a.
inline std::vector<std::filesystem::path> emit_power_curves(const SizePowerTable& table,
                                                            const std::filesystem::path& dir,
                                                            const std::string& stem = "power") {
  if (table.sample_sizes.empty()) {
    throw std::invalid_argument("emit_power_curves: empty table");
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (auto N : table.sample_sizes) {
    const auto path = dir / (stem + "_N" + std::to_string(N) + ".csv");
    std::ofstream os(path);
    if (!os) {
      throw std::runtime_error("cannot write " + path.string());
    }
    os << "lambda8";
    for (double a : table.a_values) {
      os << ",a=" << std::setprecision(6) << a;
    }
    os << '\n';
    if (!table.a_values.empty()) {
      for (double l8 : table.lambda8) {
        os << std::setprecision(6) << l8;
        for (double a : table.a_values) {
          os << ',' << std::setprecision(10) << table.at(N, a, l8).rate;
        }
        os << '\n';
      }
    }
    files.push_back(path);
  }
  return files;
}

}  // namespace lcm
