#include "sqlearn/oracles.hpp"

#include <cmath>

#include "sqlearn/tail_measures.hpp"

namespace sqlearn {
namespace {

using Eigen::Index;

// Per-position predictions and losses over a batch (nullptr = every row).
struct BatchEval {
  Eigen::VectorXd z;
  Eigen::VectorXd losses;
};

Index resolve(const std::vector<Index>* batch, Index pos) {
  return batch ? (*batch)[static_cast<std::size_t>(pos)] : pos;
}

BatchEval eval_batch(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
                     const Dataset& data, const std::vector<Index>* batch) {
  if (w.size() != data.features.cols())
    throw std::invalid_argument("weight/feature dimension mismatch");
  const Index m = batch ? static_cast<Index>(batch->size()) : data.rows();
  BatchEval ev;
  ev.z.resize(m);
  ev.losses.resize(m);
  for (Index pos = 0; pos < m; ++pos) {
    const Index row = resolve(batch, pos);
    ev.z[pos] = data.features.row(row).dot(w);
    ev.losses[pos] = loss_value(kind, ev.z[pos], data.targets[row]);
  }
  return ev;
}

// g += coef * loss_slope * x_row, accumulated in ascending position order.
void add_weighted_grad(Eigen::VectorXd& g, LossKind kind, const Dataset& data,
                       const std::vector<Index>* batch, const BatchEval& ev,
                       const std::vector<Index>& positions, double coef) {
  for (const Index pos : positions) {
    const Index row = resolve(batch, pos);
    const double slope = loss_slope(kind, ev.z[pos], data.targets[row]);
    g.noalias() += coef * slope * data.features.row(row).transpose();
  }
}

OracleOutput exact_on(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
                      const Dataset& data, const std::vector<Index>* batch,
                      double p, double lambda) {
  const BatchEval ev = eval_batch(kind, w, data, batch);
  const Index m = ev.losses.size();
  const double mm = static_cast<double>(m);
  const TailSplit<double> split = tail_split(ev.losses, p);

  // same expression as tail_measures::superquantile, so values match bit
  // for bit
  double tail_sum = 0;
  for (const Index pos : split.above) tail_sum += ev.losses[pos];
  double value = tail_sum / (mm * (1.0 - p)) +
                 split.delta / (1.0 - p) * split.quantile;

  OracleOutput out;
  out.gradient = Eigen::VectorXd::Zero(w.size());
  add_weighted_grad(out.gradient, kind, data, batch, ev, split.above,
                    1.0 / (mm * (1.0 - p)));
  Index support = static_cast<Index>(split.above.size());
  if (split.delta > 0.0) {
    const double coef =
        split.delta / ((1.0 - p) * static_cast<double>(split.equal.size()));
    add_weighted_grad(out.gradient, kind, data, batch, ev, split.equal, coef);
    support += static_cast<Index>(split.equal.size());
  }

  const RidgeTerm ridge = ridge_term(w, lambda, data.has_intercept);
  out.value = value + ridge.value;
  out.gradient += ridge.gradient;
  out.diag.quantile = split.quantile;
  out.diag.delta = split.delta;
  out.diag.support_size = support;
  return out;
}

OracleOutput smoothed_on(LossKind kind,
                         const Eigen::Ref<const Eigen::VectorXd>& w,
                         const Dataset& data, const std::vector<Index>* batch,
                         double p, double mu, double lambda) {
  const BatchEval ev = eval_batch(kind, w, data, batch);
  const Index m = ev.losses.size();
  const double mm = static_cast<double>(m);
  const DualWeights dw = smoothed_dual_weights(ev.losses, p, mu);

  double weighted = 0;
  for (const Index pos : dw.support) weighted += dw.q[pos] * ev.losses[pos];
  const double divergence =
      (dw.q.array() - 1.0 / mm).matrix().squaredNorm();
  double value = weighted - 0.5 * mu * divergence;

  OracleOutput out;
  out.gradient = Eigen::VectorXd::Zero(w.size());
  for (const Index pos : dw.support) {
    const Index row = resolve(batch, pos);
    const double slope = loss_slope(kind, ev.z[pos], data.targets[row]);
    out.gradient.noalias() +=
        dw.q[pos] * slope * data.features.row(row).transpose();
  }

  const RidgeTerm ridge = ridge_term(w, lambda, data.has_intercept);
  out.value = value + ridge.value;
  out.gradient += ridge.gradient;
  out.diag.lambda_star = dw.lambda_star;
  out.diag.support_size = static_cast<Index>(dw.support.size());
  return out;
}

}  // namespace

OracleOutput erm_oracle(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
                        const Dataset& data, double lambda) {
  const BatchEval ev = eval_batch(kind, w, data, nullptr);
  const Index n = ev.losses.size();
  if (n == 0) throw std::invalid_argument("empty distribution");
  const double nn = static_cast<double>(n);

  OracleOutput out;
  out.gradient = Eigen::VectorXd::Zero(w.size());
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    total += ev.losses[i];
    const double slope = loss_slope(kind, ev.z[i], data.targets[i]);
    out.gradient.noalias() += slope * data.features.row(i).transpose();
  }
  out.gradient /= nn;

  const RidgeTerm ridge = ridge_term(w, lambda, data.has_intercept);
  out.value = total / nn + ridge.value;
  out.gradient += ridge.gradient;
  out.diag.support_size = n;
  return out;
}

OracleOutput superquantile_subgradient(
    LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
    const Dataset& data, double p, double lambda) {
  return exact_on(kind, w, data, nullptr, p, lambda);
}

OracleOutput smoothed_oracle(LossKind kind,
                             const Eigen::Ref<const Eigen::VectorXd>& w,
                             const Dataset& data, double p, double mu,
                             double lambda) {
  return smoothed_on(kind, w, data, nullptr, p, mu, lambda);
}

OracleOutput minibatch_oracle(LossKind kind,
                              const Eigen::Ref<const Eigen::VectorXd>& w,
                              const Dataset& data,
                              std::span<const Eigen::Index> batch, double p,
                              std::optional<double> mu, double lambda) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<Index> idx(batch.begin(), batch.end());
  std::sort(idx.begin(), idx.end());
  if (idx.front() < 0 || idx.back() >= data.rows())
    throw std::invalid_argument("batch index out of range");
  if (std::adjacent_find(idx.begin(), idx.end()) != idx.end())
    throw std::invalid_argument("duplicate batch index");
  if (mu) return smoothed_on(kind, w, data, &idx, p, *mu, lambda);
  return exact_on(kind, w, data, &idx, p, lambda);
}

}  // namespace sqlearn
