#pragma once

// Matrices behind the asymptotic chi-square laws of the goodness-of-fit and
// nested statistics, and numerical checks of their projection identities.
//
//   L     = D^(-1/2) dp/dtheta            (D = diag p)
//   R     = L (L'L)^-1 L'                 orthogonal projection onto span L
//   V     = D^(1/2) R D^(-1/2)
//   Sigma = D - p p'
//   Q     = D^(-1/2) (I - V) Sigma (I - V)' D^(-1/2)
//         = (I - R)(I - s s')(I - R),     s = sqrt(p)
//
// Since R s = 0, Q = I - R - s s' is a projection of trace 2^k - rank(L) - 1.

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcm/inference.hpp"
#include "lcm/model.hpp"

namespace lcm {

struct AsymptoticBundle {
  Matrix L;
  Matrix Vmat;
  Matrix Sigma;
  Matrix Qmat;
  Vector p;
  int rank = 0;
  double gram_condition = 0.0;
  bool pseudo_inverse = false;
};

struct NestedProjections {
  Matrix R_L;
  Matrix R_M;
  Vector sqrt_p;
  int h1 = 0;
  int h2 = 0;
  double gram_condition_L = 0.0;
  double gram_condition_M = 0.0;
};

namespace detail {

struct Projection {
  Matrix R;
  double condition = 0.0;
};

// L (L'L)^-1 L' with a Cholesky solve. Refuses a singular Gram matrix unless
// pseudo-inverse mode is requested.
inline Projection column_projection(const Matrix& L, bool pseudo_inverse,
                                    const char* what) {
  const Matrix G = L.transpose() * L;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(G, Eigen::EigenvaluesOnly);
  const Vector ev = eig.eigenvalues();
  const double lmax = ev.size() > 0 ? ev.maxCoeff() : 0.0;
  const double lmin = ev.size() > 0 ? ev.minCoeff() : 0.0;
  Projection out;
  out.condition = lmin > 0.0 ? lmax / lmin : kInf;
  const int rank = numerical_rank(L);
  if (rank < L.cols()) {
    if (!pseudo_inverse) {
      throw std::runtime_error(std::string(what) + ": Gram matrix is singular (rank " +
                               std::to_string(rank) + " of " +
                               std::to_string(L.cols()) +
                               "); reduce the parametrization or use pseudo-inverse mode");
    }
    const Matrix Gp = G.completeOrthogonalDecomposition().pseudoInverse();
    out.R = L * Gp * L.transpose();
    return out;
  }
  Eigen::LLT<Matrix> llt(G);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(std::string(what) + ": Cholesky factorization failed");
  }
  out.R = L * llt.solve(L.transpose());
  return out;
}

inline Matrix scaled_jacobian(const ModelDesign& design, const Theta& theta0, Vector& p) {
  p = manifest_distribution(design, theta0).p;
  const Vector inv_sqrt = p.array().rsqrt().matrix();
  return inv_sqrt.asDiagonal() * manifest_jacobian(design, theta0);
}

}  // namespace detail

inline AsymptoticBundle build_bundle(const ModelDesign& design, const Theta& theta0,
                                     bool pseudo_inverse = false) {
  design.validate();
  AsymptoticBundle b;
  b.L = detail::scaled_jacobian(design, theta0, b.p);
  b.rank = numerical_rank(b.L);
  const detail::Projection proj =
      detail::column_projection(b.L, pseudo_inverse, "asymptotic bundle");
  b.gram_condition = proj.condition;
  b.pseudo_inverse = pseudo_inverse;

  const auto n = b.p.size();
  const Vector sq = b.p.array().sqrt().matrix();
  const Vector isq = b.p.array().rsqrt().matrix();
  const Matrix I = Matrix::Identity(n, n);
  b.Vmat = sq.asDiagonal() * proj.R * isq.asDiagonal();
  b.Sigma = Matrix(b.p.asDiagonal()) - b.p * b.p.transpose();
  const Matrix IV = I - b.Vmat;
  b.Qmat = isq.asDiagonal() * IV * b.Sigma * IV.transpose() * isq.asDiagonal();
  return b;
}

inline NestedProjections build_nested_projections(const NestedPair& pair,
                                                  const Theta& theta0_A,
                                                  bool pseudo_inverse = false) {
  pair.validate();
  NestedProjections out;
  Vector p;
  const Matrix L = detail::scaled_jacobian(pair.design_A, theta0_A, p);
  const auto kept = pair.kept_coordinates();
  Matrix M(L.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) {
    M.col(static_cast<Eigen::Index>(c)) = L.col(kept[c]);
  }
  const auto pl = detail::column_projection(L, pseudo_inverse, "nested projection R_L");
  const auto pm = detail::column_projection(M, pseudo_inverse, "nested projection R_M");
  out.R_L = pl.R;
  out.R_M = pm.R;
  out.gram_condition_L = pl.condition;
  out.gram_condition_M = pm.condition;
  out.sqrt_p = p.array().sqrt().matrix();
  out.h1 = pair.h1();
  out.h2 = pair.h2();
  return out;
}

// Keeps parameter columns in order while they add to the Jacobian rank,
// giving an identifiable reduction of a design at theta0. Returns the
// reduced design and writes the reduced theta.
inline ModelDesign identifiable_reduction(const ModelDesign& design, const Theta& theta0,
                                          Theta* reduced_theta = nullptr) {
  const Matrix J = manifest_jacobian(design, theta0);
  std::vector<int> kept;
  Matrix acc(J.rows(), 0);
  int rank = 0;
  for (int c = 0; c < J.cols(); ++c) {
    Matrix trial(J.rows(), acc.cols() + 1);
    trial << acc, J.col(c);
    const int r = numerical_rank(trial);
    if (r > rank) {
      acc = trial;
      rank = r;
      kept.push_back(c);
    }
  }
  NestedPair pair{design, {}, {}};
  const std::set<int> keep(kept.begin(), kept.end());
  for (int r = 0; r < design.t(); ++r) {
    if (!keep.count(r)) {
      pair.drop_lambda.push_back(r);
    }
  }
  for (int s = 0; s < design.u(); ++s) {
    if (!keep.count(design.t() + s)) {
      pair.drop_eta.push_back(s);
    }
  }
  if (reduced_theta != nullptr) {
    *reduced_theta = Theta::from_flat(pair.design_B(), pair.restrict_theta(theta0.flat()));
  }
  return pair.design_B();
}

struct IdentityCheck {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace detail {

inline IdentityCheck make_check(std::string name, double error, double tol) {
  return {std::move(name), error, tol, std::isfinite(error) && error <= tol};
}

inline double max_abs(const Matrix& A) { return A.cwiseAbs().maxCoeff(); }

}  // namespace detail

inline std::vector<IdentityCheck> verify_bundle(const AsymptoticBundle& b, int n_params,
                                                double tol_matrix = 1e-8,
                                                double tol_trace = 1e-6) {
  std::vector<IdentityCheck> out;
  const auto n = b.Qmat.rows();
  const Vector sq = b.p.array().sqrt().matrix();
  out.push_back(detail::make_check("Q symmetric",
                                   detail::max_abs(b.Qmat - b.Qmat.transpose()),
                                   tol_matrix));
  out.push_back(detail::make_check("Q idempotent",
                                   detail::max_abs(b.Qmat * b.Qmat - b.Qmat), tol_matrix));
  const double expected = static_cast<double>(n) - n_params - 1.0;
  out.push_back(detail::make_check("trace Q = 2^k - (t+u) - 1",
                                   std::abs(b.Qmat.trace() - expected), tol_trace));
  out.push_back(detail::make_check("Q sqrt(p) = 0", (b.Qmat * sq).cwiseAbs().maxCoeff(),
                                   tol_matrix));
  out.push_back(detail::make_check("Q = I - R - sqrt(p) sqrt(p)'",
                                   detail::max_abs(b.Qmat - (Matrix::Identity(n, n) -
                                                             b.L * (b.L.transpose() * b.L)
                                                                       .ldlt()
                                                                       .solve(b.L.transpose()) -
                                                             sq * sq.transpose())),
                                   tol_matrix));
  return out;
}

inline std::vector<IdentityCheck> verify_projections(const NestedProjections& np,
                                                     double tol_matrix = 1e-8,
                                                     double tol_trace = 1e-6) {
  std::vector<IdentityCheck> out;
  const Matrix& RL = np.R_L;
  const Matrix& RM = np.R_M;
  const Matrix D = RL - RM;
  out.push_back(detail::make_check("R_L symmetric", detail::max_abs(RL - RL.transpose()),
                                   tol_matrix));
  out.push_back(detail::make_check("R_L idempotent", detail::max_abs(RL * RL - RL),
                                   tol_matrix));
  out.push_back(detail::make_check("R_M symmetric", detail::max_abs(RM - RM.transpose()),
                                   tol_matrix));
  out.push_back(detail::make_check("R_M idempotent", detail::max_abs(RM * RM - RM),
                                   tol_matrix));
  out.push_back(detail::make_check("trace R_L = h1", std::abs(RL.trace() - np.h1),
                                   tol_trace));
  out.push_back(detail::make_check("trace R_M = h2", std::abs(RM.trace() - np.h2),
                                   tol_trace));
  out.push_back(detail::make_check("R_L R_M = R_M", detail::max_abs(RL * RM - RM),
                                   tol_matrix));
  out.push_back(detail::make_check("R_M R_L = R_M", detail::max_abs(RM * RL - RM),
                                   tol_matrix));
  out.push_back(detail::make_check("R_L - R_M idempotent", detail::max_abs(D * D - D),
                                   tol_matrix));
  out.push_back(detail::make_check("trace(R_L - R_M) = h1 - h2",
                                   std::abs(D.trace() - (np.h1 - np.h2)), tol_trace));
  out.push_back(detail::make_check("R_L sqrt(p) = 0",
                                   (RL * np.sqrt_p).cwiseAbs().maxCoeff(), tol_matrix));
  out.push_back(detail::make_check("sqrt(p)' R_L = 0",
                                   (np.sqrt_p.transpose() * RL).cwiseAbs().maxCoeff(),
                                   tol_matrix));
  out.push_back(detail::make_check("R_M sqrt(p) = 0",
                                   (RM * np.sqrt_p).cwiseAbs().maxCoeff(), tol_matrix));
  out.push_back(detail::make_check("sqrt(p)' R_M = 0",
                                   (np.sqrt_p.transpose() * RM).cwiseAbs().maxCoeff(),
                                   tol_matrix));
  return out;
}

}  // namespace lcm
