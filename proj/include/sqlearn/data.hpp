#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sqlearn/dataset.hpp"
#include "sqlearn/rng.hpp"

namespace sqlearn {

/// Ingestion failure (unreadable file, malformed cells, bad schema/column
/// references). The CLI maps this to its data-error exit code.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Column roles for CSV ingestion. `categorical` columns are one-hot
/// expanded with levels in lexicographic order; every other non-target
/// column is parsed as numeric.
struct CsvSchema {
  std::string target;
  Task task = Task::regression;
  std::vector<std::string> categorical;
};

/// Reads a schema file: JSON with keys "target" (string), "task"
/// ("regression" | "binary_classification"), optional "categorical"
/// (array of strings).
CsvSchema load_schema(const std::string& path);

/// Loads a header-rowed, RFC-4180-style CSV under the given schema.
/// Classification targets must form a binary set; {-1, +1} is remapped to
/// {0, 1}. Missing or unparseable cells raise DataError listing the
/// offending rows (1-based, counting data rows).
Dataset load_csv(const std::string& path, const CsvSchema& schema);

/// Writes features plus a final target column (named "target"); quotes
/// fields only when needed.
void save_csv(const std::string& path, const Dataset& data);

/// Writes the matching schema JSON for a dataset produced by save_csv.
void save_schema(const std::string& path, const Dataset& data);

/// Column-wise affine transform fitted on training features: subtract mean,
/// divide by population standard deviation. Constant columns keep scale 1.
struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
};

/// Fits the scaler on data and returns the transformed copy. A trailing
/// intercept column is passed through untouched.
std::pair<Dataset, Scaler> standardize(const Dataset& data);

/// Applies a fitted scaler to another dataset (e.g. the test split).
Dataset apply_scaler(const Scaler& scaler, const Dataset& data);

struct SplitResult {
  Dataset train;
  Dataset test;
};

/// Seeded uniform shuffle; the first ceil(train_fraction * n) rows of the
/// shuffle become the training set.
SplitResult train_test_split(const Dataset& data, double train_fraction,
                             std::uint64_t seed);

/// Keeps every minority-class row and a seeded uniform sample (without
/// replacement) of ceil(ratio * n_minority) majority rows. Survivors keep
/// their original relative order. Classification only; ties between class
/// counts treat label 1 as the majority.
Dataset downsample_majority(const Dataset& data, double ratio,
                            std::uint64_t seed);

/// Seeded resample to a distribution-shifted subset: ceil(alpha * n_min)
/// majority rows plus ceil((1 - alpha) * n_min) minority rows, sampled
/// without replacement, survivors in original order. alpha must lie in
/// (0, 1).
Dataset rebalance(const Dataset& data, double alpha, std::uint64_t seed);

/// Heavy-tailed regression noise: standard normal with probability 0.8,
/// Laplace(10, 1) otherwise (inverse-CDF sampling). Mean 2.0.
double synth_regression_noise(Rng& rng);

/// Regression data with a low-rank-ish Gaussian design: X = (A/sqrt(r)) B
/// with A (n x r), B (r x d) standard Gaussian and r = max(1, round(3d/4)),
/// targets y = x'wbar + synth_regression_noise.
Dataset synth_regression(Eigen::Index n, Eigen::Index d, std::uint64_t seed);

/// Two spherical Gaussian blobs with means +/- (class_sep / 2) * e / sqrt(d),
/// labels in {0, 1}; positive_fraction sets the share of label-1 rows.
Dataset synth_classification(Eigen::Index n, Eigen::Index d, double class_sep,
                             double positive_fraction, std::uint64_t seed);

}  // namespace sqlearn
