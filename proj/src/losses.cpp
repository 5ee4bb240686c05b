#include "sqlearn/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace sqlearn {

void validate(const Dataset& data) {
  if (data.features.rows() != data.targets.size())
    throw std::invalid_argument("dataset rows and targets disagree");
  if (!data.feature_names.empty() &&
      static_cast<Eigen::Index>(data.feature_names.size()) !=
          data.features.cols())
    throw std::invalid_argument("feature names and columns disagree");
  if (!data.features.allFinite() || !data.targets.allFinite())
    throw std::invalid_argument("non-finite dataset entry");
  if (data.task == Task::binary_classification) {
    for (Eigen::Index i = 0; i < data.targets.size(); ++i) {
      const double y = data.targets[i];
      if (y != 0.0 && y != 1.0)
        throw std::invalid_argument("classification target outside {0,1}");
    }
  }
}

Dataset append_intercept(const Dataset& data) {
  if (data.has_intercept)
    throw std::invalid_argument("dataset already carries an intercept column");
  Dataset out = data;
  out.features.conservativeResize(Eigen::NoChange, data.features.cols() + 1);
  out.features.col(out.features.cols() - 1).setOnes();
  if (!out.feature_names.empty()) out.feature_names.push_back("intercept");
  out.has_intercept = true;
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double loss_value(LossKind kind, double z, double y) {
  switch (kind) {
    case LossKind::squared: {
      const double r = y - z;
      return r * r;
    }
    case LossKind::logistic:
      return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
  }
  throw std::invalid_argument("unknown loss kind");
}

double loss_slope(LossKind kind, double z, double y) {
  switch (kind) {
    case LossKind::squared:
      return 2.0 * (z - y);
    case LossKind::logistic:
      return sigmoid(z) - y;
  }
  throw std::invalid_argument("unknown loss kind");
}

double predict(const Eigen::Ref<const Eigen::VectorXd>& w,
               const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (w.size() != x.size())
    throw std::invalid_argument("weight/feature dimension mismatch");
  return w.dot(x);
}

double pointwise_loss(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& w,
                      const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  return loss_value(kind, predict(w, x), y);
}

Eigen::VectorXd pointwise_grad(LossKind kind,
                               const Eigen::Ref<const Eigen::VectorXd>& w,
                               const Eigen::Ref<const Eigen::VectorXd>& x,
                               double y) {
  return loss_slope(kind, predict(w, x), y) * x;
}

Eigen::VectorXd batch_losses(LossKind kind,
                             const Eigen::Ref<const Eigen::VectorXd>& w,
                             const Dataset& data) {
  if (w.size() != data.features.cols())
    throw std::invalid_argument("weight/feature dimension mismatch");
  const Eigen::Index n = data.rows();
  Eigen::VectorXd losses(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = data.features.row(i).dot(w);
    losses[i] = loss_value(kind, z, data.targets[i]);
  }
  return losses;
}

RidgeTerm ridge_term(const Eigen::Ref<const Eigen::VectorXd>& w, double lambda,
                     bool exclude_last) {
  if (lambda < 0.0) throw std::invalid_argument("negative ridge weight");
  const Eigen::Index d = w.size();
  const Eigen::Index penalized = exclude_last ? d - 1 : d;
  RidgeTerm out;
  out.gradient = Eigen::VectorXd::Zero(d);
  if (penalized <= 0) {
    out.value = 0.0;
    return out;
  }
  out.value = 0.5 * lambda * w.head(penalized).squaredNorm();
  out.gradient.head(penalized) = lambda * w.head(penalized);
  return out;
}

}  // namespace sqlearn
