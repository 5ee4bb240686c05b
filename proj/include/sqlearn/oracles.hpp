#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sqlearn/dataset.hpp"
#include "sqlearn/losses.hpp"

namespace sqlearn {

/// Maximizer of q'u - (mu/2) sum_i (q_i - 1/n)^2 over the capped simplex
/// {q : sum q = 1, 0 <= q_i <= 1/(n(1-p))}, with the multiplier lambda_star
/// of the sum constraint and the ascending list of indices where q_i > 0.
template <typename Scalar>
struct DualWeightsT {
  Eigen::VectorX<Scalar> q;
  Scalar lambda_star;
  std::vector<Eigen::Index> support;
};

using DualWeights = DualWeightsT<double>;

/// Solves the capped-simplex quadratic program behind the smoothed
/// superquantile. Writing u' = u + (mu/n) e and l = 1/(n(1-p)), the optimal
/// weights are q_k = clamp((u'_k - lambda)/mu, 0, l) where lambda solves
/// theta'(lambda) = 0 for the non-decreasing piecewise-affine function
///
///   theta'(lambda) = 1 - sum_i [ (u'_i - lambda)/mu * 1{u'_i - mu l <= lambda <= u'_i}
///                                + l * 1{lambda < u'_i - mu l} ].
///
/// The 2n breakpoints {u'_i, u'_i - mu l} are sorted once and swept with
/// running sums; lambda is found by affine interpolation on the bracketing
/// segment. O(n log n).
///
/// p = 0 short-circuits to the uniform weights (the cap pins q = e/n), as
/// does a constant u (by symmetry). Throws std::invalid_argument for an
/// empty u, p outside [0, 1), or mu <= 0.
template <typename Derived>
DualWeightsT<typename Derived::Scalar> smoothed_dual_weights(
    const Eigen::MatrixBase<Derived>& u, typename Derived::Scalar p,
    typename Derived::Scalar mu) {
  using Scalar = typename Derived::Scalar;
  using Index = Eigen::Index;
  const Index n = u.size();
  if (n == 0) throw std::invalid_argument("empty distribution");
  if (!(p >= Scalar(0) && p < Scalar(1)))
    throw std::invalid_argument("invalid tail level");
  if (!(mu > Scalar(0)))
    throw std::invalid_argument("smoothing parameter must be positive");

  const Scalar nn = static_cast<Scalar>(n);
  const Scalar cap = Scalar(1) / (nn * (Scalar(1) - p));

  DualWeightsT<Scalar> out;
  out.q.resize(n);

  Eigen::VectorX<Scalar> shifted(n);
  for (Index i = 0; i < n; ++i)
    shifted[i] = u.derived().coeff(i) + mu / nn;

  const auto fill_uniform = [&](Scalar lambda) {
    out.q.setConstant(Scalar(1) / nn);
    out.lambda_star = lambda;
    out.support.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out.support[static_cast<std::size_t>(i)] = i;
  };

  if (p == Scalar(0)) {
    // cap = 1/n leaves the uniform vector as the only feasible point
    fill_uniform(shifted.minCoeff() - mu * cap);
    return out;
  }
  if (shifted.maxCoeff() == shifted.minCoeff()) {
    // interior stationarity: q = e/n, lambda = u'_i - mu/n
    fill_uniform(shifted[0] - mu / nn);
    return out;
  }

  struct Event {
    Scalar value;
    Index idx;
    bool enter;  // true: lambda reaches u'_i - mu l; false: lambda reaches u'_i
  };
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(2 * n));
  for (Index i = 0; i < n; ++i) {
    events.push_back({shifted[i] - mu * cap, i, true});
    events.push_back({shifted[i], i, false});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.value != b.value) return a.value < b.value;
    if (a.enter != b.enter) return a.enter;
    return a.idx < b.idx;
  });

  // Sweep: C counts capped entries (lambda below their affine window), A and
  // S count/sum the entries whose window contains lambda.
  Index capped = n;
  Index affine = 0;
  Scalar affine_sum = 0;
  Scalar a = events.front().value, theta_a = 0;
  Scalar b = a, theta_b = 0;
  bool bracketed = false;
  std::size_t pos = 0;
  while (pos < events.size()) {
    const Scalar s = events[pos].value;
    while (pos < events.size() && events[pos].value == s) {
      if (events[pos].enter) {
        --capped;
        ++affine;
        affine_sum += shifted[events[pos].idx];
      } else {
        --affine;
        affine_sum -= shifted[events[pos].idx];
      }
      ++pos;
    }
    const Scalar theta =
        Scalar(1) - ((affine_sum - static_cast<Scalar>(affine) * s) / mu +
                     static_cast<Scalar>(capped) * cap);
    if (theta > Scalar(0)) {
      b = s;
      theta_b = theta;
      bracketed = true;
      break;
    }
    a = s;
    theta_a = theta;
  }

  Scalar lambda = a;
  if (bracketed && theta_b > theta_a)
    lambda = a - theta_a * (b - a) / (theta_b - theta_a);

  out.lambda_star = lambda;
  for (Index k = 0; k < n; ++k) {
    if (lambda < shifted[k] - mu * cap)
      out.q[k] = cap;
    else if (lambda < shifted[k])
      out.q[k] = (shifted[k] - lambda) / mu;
    else
      out.q[k] = Scalar(0);
    if (out.q[k] != Scalar(0)) out.support.push_back(k);
  }
  return out;
}

/// Optional fields are filled by the oracles that compute them: quantile and
/// delta by the exact superquantile path, lambda_star by the smoothed path.
/// support_size counts observations with nonzero weight in the gradient.
struct OracleDiagnostics {
  std::optional<double> quantile;
  std::optional<double> delta;
  std::optional<double> lambda_star;
  Eigen::Index support_size = 0;
};

struct OracleOutput {
  double value;
  Eigen::VectorXd gradient;
  OracleDiagnostics diag;
};

/// Mean loss over the dataset plus the ridge term: the empirical risk
/// objective and its gradient.
OracleOutput erm_oracle(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
                        const Dataset& data, double lambda);

/// Exact superquantile objective. value is the p-superquantile of the batch
/// losses plus the ridge term; gradient is a valid subgradient built from the
/// tail split, with the tied-at-quantile set weighted uniformly:
///
///   g = 1/(n(1-p)) sum_{u_i > Q} dL_i + delta/((1-p)|I_=|) sum_{u_i = Q} dL_i.
OracleOutput superquantile_subgradient(
    LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
    const Dataset& data, double p, double lambda);

/// Smoothed superquantile objective: value is
/// q'u - (mu/2) sum (q_i - 1/n)^2 + ridge at the optimal dual weights q of
/// smoothed_dual_weights, and gradient = sum_{support} q_i dL_i + ridge
/// gradient. Differentiable in w with the sandwich
/// f_mu <= f_exact <= f_mu + mu/2.
OracleOutput smoothed_oracle(LossKind kind,
                             const Eigen::Ref<const Eigen::VectorXd>& w,
                             const Dataset& data, double p, double mu,
                             double lambda);

/// Oracle restricted to a batch of row indices: the same computation as
/// smoothed_oracle (or superquantile_subgradient without mu) on the induced
/// sub-distribution, so the weight cap is 1/(|batch|(1-p)). A biased
/// estimator of the full objective. Batch indices are canonicalized by
/// sorting; duplicates or out-of-range indices throw.
OracleOutput minibatch_oracle(LossKind kind,
                              const Eigen::Ref<const Eigen::VectorXd>& w,
                              const Dataset& data,
                              std::span<const Eigen::Index> batch, double p,
                              std::optional<double> mu, double lambda);

}  // namespace sqlearn
