#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace sqlearn {

/// Partition of a loss vector around its p-quantile.
///
/// `above` holds the indices with u_i > quantile, `equal` the indices tied at
/// the quantile, both in ascending index order. `delta` is the probability
/// mass the quantile atom contributes to the tail average,
///   delta = (1/n) * (n - |above|) - p >= 0.
template <typename Scalar>
struct TailSplit {
  Scalar quantile;
  Scalar delta;
  std::vector<Eigen::Index> above;
  std::vector<Eigen::Index> equal;
};

namespace detail {

template <typename Derived>
void check_distribution(const Eigen::MatrixBase<Derived>& u,
                        typename Derived::Scalar p) {
  if (u.size() == 0) throw std::invalid_argument("empty distribution");
  if (!(p >= typename Derived::Scalar(0) && p < typename Derived::Scalar(1)))
    throw std::invalid_argument("invalid tail level");
}

}  // namespace detail

/// p-quantile of the empirical distribution carried by u (all atoms weighted
/// 1/n): the smallest value t among the entries with CDF(t) >= max(p, 1/n).
/// Equivalently the ceil(max(p, 1/n) * n)-th order statistic, so p = 0 gives
/// the minimum. Runs in expected O(n) via selection on a scratch copy; u is
/// never reordered.
template <typename Derived>
typename Derived::Scalar quantile(const Eigen::MatrixBase<Derived>& u,
                                  typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  detail::check_distribution(u, p);
  const Eigen::Index n = u.size();
  Eigen::Index k = static_cast<Eigen::Index>(
      std::ceil(p * static_cast<Scalar>(n)));
  k = std::max<Eigen::Index>(k, 1);
  k = std::min<Eigen::Index>(k, n);
  std::vector<Scalar> scratch(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    scratch[static_cast<std::size_t>(i)] = u.derived().coeff(i);
  std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end());
  return scratch[static_cast<std::size_t>(k - 1)];
}

/// Splits u into the strict tail above the p-quantile, the tied-at-quantile
/// set, and the quantile's residual mass delta. The returned quantile is a
/// value present in u, and above/equal together contain every index i with
/// u_i >= quantile.
template <typename Derived>
TailSplit<typename Derived::Scalar> tail_split(
    const Eigen::MatrixBase<Derived>& u, typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  const Scalar q = quantile(u, p);
  const Eigen::Index n = u.size();
  TailSplit<Scalar> split;
  split.quantile = q;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar ui = u.derived().coeff(i);
    if (ui > q)
      split.above.push_back(i);
    else if (ui == q)
      split.equal.push_back(i);
  }
  const Scalar mass_at_or_below =
      static_cast<Scalar>(n - static_cast<Eigen::Index>(split.above.size())) /
      static_cast<Scalar>(n);
  // One-ulp negatives can appear when p equals the CDF jump exactly.
  split.delta = std::max<Scalar>(mass_at_or_below - p, Scalar(0));
  return split;
}

/// Superquantile (tail mean beyond level p) of the empirical distribution:
///
///   sq_p(u) = (1 / (n (1-p))) * sum_{i: u_i > Q} u_i + (delta / (1-p)) * Q
///
/// with Q the p-quantile. Equals mean(u) at p = 0 and max(u) for
/// p >= (n-1)/n. Tail sums accumulate in ascending index order.
template <typename Derived>
typename Derived::Scalar superquantile(const Eigen::MatrixBase<Derived>& u,
                                       typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  const TailSplit<Scalar> split = tail_split(u, p);
  const Scalar n = static_cast<Scalar>(u.size());
  Scalar tail_sum = 0;
  for (const Eigen::Index i : split.above) tail_sum += u.derived().coeff(i);
  return tail_sum / (n * (Scalar(1) - p)) +
         split.delta / (Scalar(1) - p) * split.quantile;
}

/// Reference oracle for `superquantile`: integrates the left-continuous
/// quantile function directly,
///
///   sq_p(u) = (1 / (1-p)) * integral_p^1 Q_s(u) ds,
///
/// by sorting u and summing each order statistic times the length of its
/// quantile-level interval ((k-1)/n, k/n] clipped to (p, 1]. O(n log n); kept
/// as an independent cross-check of the selection-based path.
template <typename Derived>
typename Derived::Scalar superquantile_integral_oracle(
    const Eigen::MatrixBase<Derived>& u, typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  detail::check_distribution(u, p);
  const Eigen::Index n = u.size();
  std::vector<Scalar> sorted(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    sorted[static_cast<std::size_t>(i)] = u.derived().coeff(i);
  std::sort(sorted.begin(), sorted.end());
  const Scalar nn = static_cast<Scalar>(n);
  Scalar integral = 0;
  for (Eigen::Index k = 1; k <= n; ++k) {
    const Scalar lo = std::max<Scalar>(static_cast<Scalar>(k - 1) / nn, p);
    const Scalar hi = static_cast<Scalar>(k) / nn;
    if (hi > lo) integral += sorted[static_cast<std::size_t>(k - 1)] * (hi - lo);
  }
  return integral / (Scalar(1) - p);
}

}  // namespace sqlearn
