#pragma once

#include <string>
#include <vector>

#include "lcm/lcm.hpp"

namespace lcm::test {

inline std::string data_path(const std::string& name) {
  return std::string(LCM_DATA_DIR) + "/" + name;
}

// Random linear-logistic design with 0/1 Q entries and a full V.
inline ModelDesign random_design(int k, int m, int t, int u, Philox4x32& gen) {
  ModelDesign d;
  d.k = k;
  d.m = m;
  for (int r = 0; r < t; ++r) {
    Matrix q(m, k);
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < k; ++i) {
        q(j, i) = gen.uniform() < 0.5 ? 1.0 : 0.0;
      }
    }
    d.Q.push_back(q);
  }
  d.C = Matrix::Zero(m, k);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < k; ++i) {
      d.C(j, i) = 0.3 * standard_normal(gen);
    }
  }
  d.V = Matrix(m, u);
  for (int j = 0; j < m; ++j) {
    for (int s = 0; s < u; ++s) {
      d.V(j, s) = standard_normal(gen);
    }
  }
  d.d = Vector::Zero(m);
  return d;
}

inline Vector random_vector(int n, Philox4x32& gen, double scale = 1.0) {
  Vector v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = scale * standard_normal(gen);
  }
  return v;
}

// k = 2 items, m = 2 classes, one lambda (class-2 logit shift on both items
// on top of fixed offsets) and one eta (class-2 log-weight).
inline ModelDesign tiny_design() {
  ModelDesign d;
  d.k = 2;
  d.m = 2;
  Matrix q(2, 2);
  q << 0, 0, 1, 1;
  d.Q.push_back(q);
  d.C = Matrix(2, 2);
  d.C << -1.0, -0.5, 0.0, 0.0;
  d.V = Matrix(2, 1);
  d.V << 0, 1;
  d.d = Vector::Zero(2);
  return d;
}

inline ObservedCounts coleman_counts() {
  return ObservedCounts({554, 338, 97, 85, 281, 531, 75, 184, 87, 56, 182, 171, 49, 110, 140,
                         458});
}

// Reference estimates for the M1 design, lambda then eta.
inline Vector coleman_reference_theta() {
  Vector v(12);
  v << -2.34292610, 1.72393168, -0.84040580, 1.56524945, -2.06480043, 2.29928080,
      -0.91137901, 2.01252338, 0.50480183, 0.16964329, -0.87356633, -0.00424661;
  return v;
}

inline double total_variation(const Vector& p, const Vector& q) {
  return 0.5 * (p - q).cwiseAbs().sum();
}

}  // namespace lcm::test
