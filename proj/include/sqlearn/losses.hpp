#pragma once

#include <Eigen/Core>

#include "sqlearn/dataset.hpp"

namespace sqlearn {

enum class LossKind { squared, logistic };

/// Numerically stable logistic sigmoid.
double sigmoid(double z);

/// Loss of a single prediction z = w'x against target y.
/// squared:  (y - z)^2
/// logistic: max(z, 0) - y z + log(1 + exp(-|z|)), convex and overflow-free
///           for |z| up to 1e4 and beyond; y must be 0 or 1.
double loss_value(LossKind kind, double z, double y);

/// Derivative of loss_value with respect to the prediction z.
double loss_slope(LossKind kind, double z, double y);

/// Linear prediction w'x. Dimensions must agree.
double predict(const Eigen::Ref<const Eigen::VectorXd>& w,
               const Eigen::Ref<const Eigen::VectorXd>& x);

/// Loss of model w on a single observation.
double pointwise_loss(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
                      const Eigen::Ref<const Eigen::VectorXd>& x, double y);

/// Gradient in w of pointwise_loss: loss_slope(kind, w'x, y) * x.
Eigen::VectorXd pointwise_grad(LossKind kind,
                               const Eigen::Ref<const Eigen::VectorXd>& w,
                               const Eigen::Ref<const Eigen::VectorXd>& x,
                               double y);

/// Vector of per-observation losses of w over the whole dataset. Predictions
/// are computed row by row so restricted-index evaluations reproduce the same
/// values bit for bit.
Eigen::VectorXd batch_losses(LossKind kind,
                             const Eigen::Ref<const Eigen::VectorXd>& w,
                             const Dataset& data);

struct RidgeTerm {
  double value;
  Eigen::VectorXd gradient;
};

/// (lambda/2) ||w||^2 and its gradient lambda * w. With exclude_last set the
/// final coordinate (the intercept feature) is left unpenalized.
RidgeTerm ridge_term(const Eigen::Ref<const Eigen::VectorXd>& w, double lambda,
                     bool exclude_last = false);

}  // namespace sqlearn
