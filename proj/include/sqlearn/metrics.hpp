#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "sqlearn/dataset.hpp"

namespace sqlearn {

/// Fixed-width binning of a value vector: edges has bins+1 monotone entries,
/// counts sums to the number of values (the maximum lands in the last bin).
/// A constant vector gets the single bin [v - 1/2, v + 1/2].
struct Histogram {
  std::vector<double> edges;
  std::vector<Eigen::Index> counts;
};

Histogram histogram(const Eigen::Ref<const Eigen::VectorXd>& values,
                    int bins = 30);

/// Evaluation summary on a held-out set. Loss statistics use the task's
/// canonical loss (squared for regression, logistic for classification).
/// Classification adds accuracy at probability threshold 1/2 and precision
/// with the set's minority class as the positive label (count ties treat
/// label 1 as the minority); an undefined precision (no predicted positives)
/// reports 0 with the flag set.
struct Metrics {
  double mean_loss = 0;
  double loss_q50 = 0;
  double loss_q90 = 0;
  double loss_qp = 0;  // quantile at the objective's tail level
  double p_used = 0;
  std::optional<double> accuracy;
  std::optional<double> precision;
  bool precision_undefined = false;
  int positive_label = 1;
};

/// predictions are raw scores z = w'x; classification maps them through the
/// sigmoid for thresholding.
Metrics compute_metrics(const Eigen::Ref<const Eigen::VectorXd>& predictions,
                        const Eigen::Ref<const Eigen::VectorXd>& targets,
                        Task task, double p);

}  // namespace sqlearn
