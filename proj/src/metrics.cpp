#include "sqlearn/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "sqlearn/losses.hpp"
#include "sqlearn/tail_measures.hpp"

namespace sqlearn {

Histogram histogram(const Eigen::Ref<const Eigen::VectorXd>& values,
                    int bins) {
  if (values.size() == 0) throw std::invalid_argument("empty distribution");
  if (bins < 1) throw std::invalid_argument("need at least one bin");
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  Histogram h;
  if (lo == hi) {
    h.edges = {lo - 0.5, lo + 0.5};
    h.counts = {values.size()};
    return h;
  }
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = lo + width * b;
  h.edges.back() = hi;  // guard against rounding past the max
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    int b = static_cast<int>((values[i] - lo) / width);
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

Metrics compute_metrics(const Eigen::Ref<const Eigen::VectorXd>& predictions,
                        const Eigen::Ref<const Eigen::VectorXd>& targets,
                        Task task, double p) {
  if (predictions.size() != targets.size())
    throw std::invalid_argument("predictions and targets disagree in length");
  if (predictions.size() == 0)
    throw std::invalid_argument("empty distribution");
  const Eigen::Index n = predictions.size();
  const LossKind kind =
      task == Task::regression ? LossKind::squared : LossKind::logistic;

  Eigen::VectorXd losses(n);
  for (Eigen::Index i = 0; i < n; ++i)
    losses[i] = loss_value(kind, predictions[i], targets[i]);

  Metrics m;
  m.p_used = p;
  m.mean_loss = losses.mean();
  m.loss_q50 = quantile(losses, 0.5);
  m.loss_q90 = quantile(losses, 0.9);
  m.loss_qp = quantile(losses, p);

  if (task == Task::binary_classification) {
    Eigen::Index ones = 0;
    for (Eigen::Index i = 0; i < n; ++i) ones += targets[i] == 1.0;
    const Eigen::Index zeros = n - ones;
    // positive class = minority of this evaluation set
    const int positive = ones <= zeros ? 1 : 0;
    m.positive_label = positive;
    Eigen::Index correct = 0, true_pos = 0, pred_pos = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int label = sigmoid(predictions[i]) >= 0.5 ? 1 : 0;
      const int truth = targets[i] == 1.0 ? 1 : 0;
      correct += label == truth;
      if (label == positive) {
        ++pred_pos;
        true_pos += truth == positive;
      }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (pred_pos == 0) {
      m.precision = 0.0;
      m.precision_undefined = true;
    } else {
      m.precision =
          static_cast<double>(true_pos) / static_cast<double>(pred_pos);
    }
  }
  return m;
}

}  // namespace sqlearn
