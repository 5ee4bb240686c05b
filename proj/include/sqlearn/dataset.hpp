#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace sqlearn {

enum class Task { regression, binary_classification };

/// Row-per-observation design matrix with aligned targets. Classification
/// targets live in {0, 1}; +/-1 labels are remapped at ingestion. When
/// `has_intercept` is set the last feature column is the constant-1 intercept
/// appended by `append_intercept`, and ridge penalties skip it.
struct Dataset {
  Eigen::MatrixXd features;
  Eigen::VectorXd targets;
  std::vector<std::string> feature_names;
  Task task = Task::regression;
  bool has_intercept = false;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index cols() const { return features.cols(); }
};

/// Throws std::invalid_argument unless dimensions agree, every entry is
/// finite, and classification targets are all 0 or 1.
void validate(const Dataset& data);

/// Returns a copy with a constant-1 column appended and has_intercept set.
Dataset append_intercept(const Dataset& data);

}  // namespace sqlearn
