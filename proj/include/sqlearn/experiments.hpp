#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqlearn/data.hpp"
#include "sqlearn/optimizers.hpp"

namespace sqlearn {

/// Invalid or inconsistent run configuration. The CLI maps this to its
/// config-error exit code; DataError (data.hpp) maps to the data-error code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ObjectiveKind { erm, superquantile, smoothed_superquantile };

/// Training objective: plain empirical risk, the exact superquantile of the
/// losses at level p, or its smoothed version with parameter mu. All three
/// share the ridge term.
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::smoothed_superquantile;
  double p = 0.9;
  double mu = 0.1;
};

/// Data source: a CSV/schema pair or one of the synthetic generators.
struct DatasetSpec {
  std::string type = "synth_classification";
  std::string path;    // csv
  std::string schema;  // csv
  Eigen::Index n = 1000;
  Eigen::Index d = 10;
  double class_sep = 2.0;          // synth_classification
  double positive_fraction = 0.5;  // synth_classification
};

/// Training-set distribution shift applied after the split.
struct ShiftSpec {
  std::string kind = "none";  // none | downsample_majority | rebalance
  double ratio = 0.10;        // downsample_majority
  double alpha = 0.5;         // rebalance
};

struct CvSpec {
  std::vector<double> p_grid = {0.8, 0.85, 0.9, 0.95, 0.99};
  int folds = 5;
  bool stratified = false;
  std::string metric = "auto";  // auto | accuracy | val_loss_p90
};

/// One experiment: dataset, objective, algorithm, pipeline knobs, seeds.
/// lambda left unset resolves to 1/n of the training set actually fit
/// (post-shift; per fold inside cross-validation).
struct ExperimentConfig {
  DatasetSpec dataset;
  LossKind loss = LossKind::logistic;
  ObjectiveSpec objective;
  std::optional<double> lambda;
  Algorithm algorithm = Algorithm::lbfgs;
  OptimizerConfig optimizer;
  double train_fraction = 0.8;
  ShiftSpec shift;
  CvSpec cv;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  bool standardize_features = true;
  bool intercept = false;
  bool include_traces = false;
  bool histogram_csv = false;
  int histogram_bins = 30;
  std::vector<double> alphas;  // shift-sweep grid; empty = 100 points in (0,1)
  std::vector<double> mus;     // mu-sweep grid; empty = log grid 1e-6 .. 1e9
  std::string output = "report.json";
};

/// Parses and validates a config document; unknown keys and out-of-range
/// values raise ConfigError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Full resolved echo of a config (defaults filled in), embedded in every
/// report for replayability.
nlohmann::json config_to_json(const ExperimentConfig& c);

Algorithm algorithm_from_name(const std::string& name);
std::string algorithm_name(Algorithm a);
LossKind loss_from_name(const std::string& name);
std::string loss_name(LossKind k);

/// Parallel task cap: SQLEARN_THREADS when set to a positive integer, else
/// the hardware concurrency.
unsigned worker_cap();

/// Trains per seed, evaluates on the held-out split, reports per-seed
/// metrics with test-loss histograms and mean/std aggregates.
nlohmann::json cmd_train(const ExperimentConfig& c);

/// k-fold cross-validation over cv.p_grid on the (shifted) training set,
/// selecting p by mean validation accuracy (classification) or 90th
/// percentile validation loss (regression), ties to the smaller p; then
/// retrains on the full training set and evaluates like cmd_train.
nlohmann::json cmd_cv(const ExperimentConfig& c);

/// Rebalance sweep over the alpha grid: trains the configured superquantile
/// objective and an ERM baseline per (alpha, seed), reporting flattened
/// metric arrays and their histograms.
nlohmann::json cmd_shift_sweep(const ExperimentConfig& c);

/// Smoothing sweep: trains at each mu, reporting the ridge-free smoothed and
/// exact superquantile of the training losses at the solution, termination
/// reasons, and an ERM reference per seed.
nlohmann::json cmd_mu_sweep(const ExperimentConfig& c);

/// Structural check of a report against the v1 shape; throws
/// std::runtime_error on violations. Applied to every report before writing.
void check_report(const nlohmann::json& report);

/// Serializes the report to path; with histogram_csv also writes
/// "<path stem>_hist.csv" holding any histograms as name,bin_lo,bin_hi,count
/// rows.
void write_report(const nlohmann::json& report, const std::string& path,
                  bool histogram_csv);

}  // namespace sqlearn
