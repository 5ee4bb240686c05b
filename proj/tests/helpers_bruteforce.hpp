// Test-only reference solver for the capped-simplex inner problem.
//
// The maximizer of q'u - (mu/2)*||q - e/n||^2 over
// {q : sum q = 1, 0 <= q_i <= cap} is the Euclidean projection of
// v = u/mu + e/n onto that set. The projection clips v - tau coordinatewise
// to [0, cap], where the shift tau is found by bisection on the monotone
// mass function g(tau) = sum_i clip(v_i - tau, 0, cap). Entirely independent
// of the production sweep, so agreement is meaningful.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace sqlearn::testing {

inline Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& v,
                                              double cap) {
  const Eigen::Index n = v.size();
  if (n == 0) throw std::invalid_argument("empty vector");
  if (!(cap * static_cast<double>(n) >= 1.0))
    throw std::invalid_argument("infeasible cap");
  const auto mass = [&](double tau) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      total += std::min(cap, std::max(0.0, v[i] - tau));
    return total;
  };
  double lo = v.minCoeff() - cap;  // mass(lo) = n*cap >= 1
  double hi = v.maxCoeff();        // mass(hi) = 0
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0)
      lo = mid;
    else
      hi = mid;
  }
  const double tau = 0.5 * (lo + hi);
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i)
    q[i] = std::min(cap, std::max(0.0, v[i] - tau));
  return q;
}

// Reference dual weights for the smoothed tail objective on losses u.
inline Eigen::VectorXd bruteforce_dual_weights(const Eigen::VectorXd& u,
                                               double p, double mu) {
  const double n = static_cast<double>(u.size());
  const double cap = 1.0 / (n * (1.0 - p));
  const Eigen::VectorXd v =
      u / mu + Eigen::VectorXd::Constant(u.size(), 1.0 / n);
  return project_capped_simplex(v, cap);
}

}  // namespace sqlearn::testing
