#pragma once

// Linear-logistic latent class model for binary items.
//
// A design fixes how free parameters (lambda, eta) enter the item logits and
// class log-weights:
//
//   logit p_ji = sum_r Q_r(j,i) lambda_r + C(j,i)
//   w_j        = softmax_j( sum_s V(j,s) eta_s + d_j )
//
// and the manifest distribution over the 2^k response patterns is the
// mixture  p_nu = sum_j w_j prod_i p_ji^y_i (1 - p_ji)^(1 - y_i).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lcm/rng.hpp"

namespace lcm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Largest item count for which the 2^k pattern table is materialized.
inline constexpr int kMaxItems = 20;

struct ModelDesign {
  int k = 0;               // items
  int m = 0;               // latent classes
  std::vector<Matrix> Q;   // t matrices, each m x k
  Matrix C;                // m x k logit offsets
  Matrix V;                // m x u
  Vector d;                // m log-weight offsets

  int t() const { return static_cast<int>(Q.size()); }
  int u() const { return static_cast<int>(V.cols()); }
  int n_params() const { return t() + u(); }
  std::size_t n_patterns() const { return std::size_t{1} << k; }

  // Throws std::invalid_argument describing the first inconsistency.
  void validate() const {
    if (k <= 0 || m <= 0) {
      throw std::invalid_argument("design: k and m must be positive");
    }
    if (k > kMaxItems) {
      throw std::invalid_argument("design: k = " + std::to_string(k) +
                                  " exceeds the supported maximum of " +
                                  std::to_string(kMaxItems));
    }
    if (Q.empty() && V.cols() == 0) {
      throw std::invalid_argument("design: no free parameters (t + u = 0)");
    }
    for (std::size_t r = 0; r < Q.size(); ++r) {
      if (Q[r].rows() != m || Q[r].cols() != k) {
        throw std::invalid_argument("design: Q[" + std::to_string(r) +
                                    "] is not m x k");
      }
      if (!Q[r].allFinite()) {
        throw std::invalid_argument("design: Q has non-finite entries");
      }
    }
    if (C.rows() != m || C.cols() != k || !C.allFinite()) {
      throw std::invalid_argument("design: C must be a finite m x k matrix");
    }
    if (V.rows() != m || !V.allFinite()) {
      throw std::invalid_argument("design: V must be a finite m x u matrix");
    }
    if (d.size() != m || !d.allFinite()) {
      throw std::invalid_argument("design: d must be a finite length-m vector");
    }
  }
};

// Free parameter point. Stored as one vector ordered (lambda_1..t, eta_1..u),
// which is also the column order of every Jacobian and gradient.
struct Theta {
  Vector lambda;
  Vector eta;

  Theta() = default;
  Theta(Vector l, Vector e) : lambda(std::move(l)), eta(std::move(e)) {}

  static Theta zeros(const ModelDesign& design) {
    return {Vector::Zero(design.t()), Vector::Zero(design.u())};
  }

  static Theta from_flat(const ModelDesign& design, const Vector& flat) {
    if (flat.size() != design.n_params()) {
      throw std::invalid_argument("theta: expected " +
                                  std::to_string(design.n_params()) +
                                  " parameters, got " +
                                  std::to_string(flat.size()));
    }
    return {flat.head(design.t()), flat.tail(design.u())};
  }

  Vector flat() const {
    Vector out(lambda.size() + eta.size());
    out << lambda, eta;
    return out;
  }
};

struct LatentParams {
  Vector w;  // class weights
  Matrix P;  // m x k item probabilities
};

struct ManifestDistribution {
  Vector p;  // indexed by pattern_index - 1
};

struct ObservedCounts {
  std::vector<std::int64_t> n;
  std::int64_t N = 0;

  ObservedCounts() = default;
  explicit ObservedCounts(std::vector<std::int64_t> counts) : n(std::move(counts)) {
    N = 0;
    for (auto c : n) {
      if (c < 0) {
        throw std::invalid_argument("counts: negative cell count");
      }
      N += c;
    }
    if (N <= 0) {
      throw std::invalid_argument("counts: total sample size must be positive");
    }
  }

  Vector proportions() const {
    Vector out(static_cast<Eigen::Index>(n.size()));
    for (std::size_t i = 0; i < n.size(); ++i) {
      out[static_cast<Eigen::Index>(i)] =
          static_cast<double>(n[i]) / static_cast<double>(N);
    }
    return out;
  }
};

namespace detail {

inline void check_theta(const ModelDesign& design, const Theta& theta) {
  if (theta.lambda.size() != design.t() || theta.eta.size() != design.u()) {
    throw std::invalid_argument("theta: lengths do not match the design (t = " +
                                std::to_string(design.t()) + ", u = " +
                                std::to_string(design.u()) + ")");
  }
}

inline double logistic(double s) {
  if (s >= 0.0) {
    return 1.0 / (1.0 + std::exp(-s));
  }
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline int bit(std::size_t pattern0, int item, int k) {
  return static_cast<int>((pattern0 >> (k - 1 - item)) & 1U);
}

}  // namespace detail

// nu = 1 + sum_i y_i 2^(k-i), item 1 most significant.
inline std::size_t pattern_index(std::span<const int> y) {
  if (y.empty() || y.size() > static_cast<std::size_t>(kMaxItems)) {
    throw std::domain_error("pattern_index: pattern length out of range");
  }
  std::size_t nu = 0;
  for (int yi : y) {
    if (yi != 0 && yi != 1) {
      throw std::domain_error("pattern_index: entries must be 0 or 1");
    }
    nu = (nu << 1) | static_cast<std::size_t>(yi);
  }
  return nu + 1;
}

inline std::vector<int> pattern_from_index(std::size_t nu, int k) {
  if (k <= 0 || k > kMaxItems || nu < 1 || nu > (std::size_t{1} << k)) {
    throw std::domain_error("pattern_from_index: index out of range");
  }
  std::vector<int> y(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    y[static_cast<std::size_t>(i)] = detail::bit(nu - 1, i, k);
  }
  return y;
}

inline Matrix item_probs(const ModelDesign& design, const Theta& theta) {
  detail::check_theta(design, theta);
  Matrix s = design.C;
  for (int r = 0; r < design.t(); ++r) {
    s += design.Q[static_cast<std::size_t>(r)] * theta.lambda[r];
  }
  return s.unaryExpr([](double v) { return detail::logistic(v); });
}

inline Vector class_weights(const ModelDesign& design, const Theta& theta) {
  detail::check_theta(design, theta);
  Vector z = design.d;
  if (design.u() > 0) {
    z += design.V * theta.eta;
  }
  const double zmax = z.maxCoeff();
  Vector w = (z.array() - zmax).exp().matrix();
  return w / w.sum();
}

inline LatentParams latent_params(const ModelDesign& design, const Theta& theta) {
  return {class_weights(design, theta), item_probs(design, theta)};
}

namespace detail {

// f(j, nu) = prod_i p_ji^y_i (1 - p_ji)^(1 - y_i), built in log space so that
// products of many small factors do not underflow prematurely.
inline Matrix class_conditionals(const Matrix& P, int k) {
  const auto m = P.rows();
  const std::size_t cells = std::size_t{1} << k;
  const Matrix logp = P.array().log().matrix();
  const Matrix log1mp = (1.0 - P.array()).log().matrix();
  Matrix f(m, static_cast<Eigen::Index>(cells));
  for (Eigen::Index j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < cells; ++c) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        acc += bit(c, i, k) ? logp(j, i) : log1mp(j, i);
      }
      f(j, static_cast<Eigen::Index>(c)) = std::exp(acc);
    }
  }
  return f;
}

}  // namespace detail

inline ManifestDistribution manifest_distribution(const ModelDesign& design,
                                                  const Theta& theta) {
  const LatentParams lp = latent_params(design, theta);
  const Matrix f = detail::class_conditionals(lp.P, design.k);
  return {f.transpose() * lp.w};
}

// d p_nu / d theta, rows indexed by pattern, columns (lambda..., eta...).
//
//   d p_nu / d lambda_r = sum_j w_j f_j(nu) sum_i Q_r(j,i) (y_i - p_ji)
//   d p_nu / d eta_s    = sum_j w_j f_j(nu) (V(j,s) - sum_h w_h V(h,s))
inline Matrix manifest_jacobian(const ModelDesign& design, const Theta& theta) {
  const LatentParams lp = latent_params(design, theta);
  const int k = design.k;
  const auto m = static_cast<Eigen::Index>(design.m);
  const auto cells = static_cast<Eigen::Index>(design.n_patterns());
  const Matrix f = detail::class_conditionals(lp.P, k);

  Matrix J = Matrix::Zero(cells, design.n_params());
  Matrix resid(m, k);
  for (Eigen::Index c = 0; c < cells; ++c) {
    for (Eigen::Index j = 0; j < m; ++j) {
      for (int i = 0; i < k; ++i) {
        resid(j, i) = detail::bit(static_cast<std::size_t>(c), i, k) - lp.P(j, i);
      }
    }
    for (int r = 0; r < design.t(); ++r) {
      const Vector score =
          design.Q[static_cast<std::size_t>(r)].cwiseProduct(resid).rowwise().sum();
      double acc = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        acc += lp.w[j] * f(j, c) * score[j];
      }
      J(c, r) = acc;
    }
  }
  if (design.u() > 0) {
    const Eigen::RowVectorXd vbar = lp.w.transpose() * design.V;
    const Matrix centered = design.V.rowwise() - vbar;
    const Matrix wf = f.transpose() * lp.w.asDiagonal();  // cells x m
    J.rightCols(design.u()) = wf * centered;
  }
  return J;
}

// Number of singular values above rel_tol times the largest.
inline int numerical_rank(const Matrix& A, double rel_tol = 1e-8) {
  if (A.size() == 0) {
    return 0;
  }
  Eigen::JacobiSVD<Matrix> svd(A);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0.0) {
    return 0;
  }
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > rel_tol * sv[0]) {
      ++rank;
    }
  }
  return rank;
}

inline int jacobian_rank(const ModelDesign& design, const Theta& theta,
                         double rel_tol = 1e-8) {
  return numerical_rank(manifest_jacobian(design, theta), rel_tol);
}

// Multinomial draw by inverse CDF over the pattern cells.
inline ObservedCounts sample_counts(const ManifestDistribution& dist,
                                    std::int64_t N, Philox4x32& gen) {
  if (N < 1) {
    throw std::invalid_argument("sample_counts: N must be at least 1");
  }
  const auto cells = static_cast<std::size_t>(dist.p.size());
  std::vector<double> cdf(cells);
  double acc = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    acc += dist.p[static_cast<Eigen::Index>(c)];
    cdf[c] = acc;
  }
  std::vector<std::int64_t> n(cells, 0);
  for (std::int64_t draw = 0; draw < N; ++draw) {
    const double u = gen.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) {
      --it;
    }
    ++n[static_cast<std::size_t>(it - cdf.begin())];
  }
  return ObservedCounts(std::move(n));
}

inline ObservedCounts sample_counts(const ModelDesign& design, const Theta& theta,
                                    std::int64_t N, std::uint64_t seed) {
  Philox4x32 gen(seed);
  return sample_counts(manifest_distribution(design, theta), N, gen);
}

// log of the multinomial likelihood. Returns -infinity when a cell with
// positive count has zero model probability.
inline double log_likelihood(const ObservedCounts& counts,
                             const ManifestDistribution& dist) {
  if (counts.n.size() != static_cast<std::size_t>(dist.p.size())) {
    throw std::invalid_argument("log_likelihood: length mismatch");
  }
  double ll = std::lgamma(static_cast<double>(counts.N) + 1.0);
  for (std::size_t c = 0; c < counts.n.size(); ++c) {
    const auto nc = static_cast<double>(counts.n[c]);
    ll -= std::lgamma(nc + 1.0);
    if (nc > 0.0) {
      const double pc = dist.p[static_cast<Eigen::Index>(c)];
      if (!(pc > 0.0)) {
        return -std::numeric_limits<double>::infinity();
      }
      ll += nc * std::log(pc);
    }
  }
  return ll;
}

}  // namespace lcm
