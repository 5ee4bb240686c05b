#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sqlearn/oracles.hpp"

namespace sqlearn {

enum class Algorithm { subgradient, dual_averaging, gradient, nesterov, lbfgs, sgd };

enum class Termination { converged, max_iter, line_search_failure };

/// Shared knob set; each runner reads the fields that apply to it and
/// validates them on entry. step is the base learning rate eta0.
struct OptimizerConfig {
  int max_iter = 500;          // iterations, or epochs for sgd
  double step = 0.1;           // eta0 / fixed step / line-search fallback scale
  double tolerance = 1e-8;     // gradient-norm stopping threshold
  double momentum = 0.9;       // sgd velocity coefficient
  double decay = 0.5;          // sgd: eta_t = step * decay^floor(t / decay_period)
  int decay_period = 10;       // sgd epochs per decay step
  Eigen::Index batch_size = 100;  // sgd minibatch size (clamped to n)
  int lbfgs_memory = 10;       // curvature pairs kept
  int ls_max_trials = 25;      // strong-Wolfe oracle evaluations allowed
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  std::uint64_t seed = 0;      // sgd shuffle stream
};

struct TraceRecord {
  int iter;
  double objective;
  double grad_norm;
  double step;        // step size or scale in effect at this iterate
  double elapsed_sec;
};

/// Per-run record: one TraceRecord per visited iterate (at most
/// max_iter + 1). `averaged` is filled by dual averaging with the running
/// iterate average; empty for other algorithms.
struct RunTrace {
  std::vector<TraceRecord> records;
  Termination termination = Termination::max_iter;
  Eigen::VectorXd averaged;
};

struct RunResult {
  Eigen::VectorXd weights;
  double objective;  // oracle value at weights
  RunTrace trace;
};

/// First-order oracle: full objective value and (sub)gradient at w.
using Oracle = std::function<OracleOutput(const Eigen::VectorXd&)>;

/// Restricted oracle over a batch of row indices; the full index range asks
/// for the whole dataset.
using BatchOracle = std::function<OracleOutput(
    const Eigen::VectorXd&, std::span<const Eigen::Index>)>;

/// Throws std::invalid_argument when a field the algorithm uses is out of
/// range (e.g. sgd requires batch_size >= 1, decay in (0, 1]).
void validate(const OptimizerConfig& config, Algorithm algorithm);

/// Subgradient descent with eta_k = eta0 / sqrt(k+1); returns the
/// best-objective iterate. Stops early when the subgradient norm falls to
/// tolerance.
RunResult run_subgradient(const Oracle& oracle, Eigen::VectorXd w0,
                          const OptimizerConfig& config);

/// Weighted dual averaging: w_{k+1} = w0 - s_k / beta_k with s_k the running
/// subgradient sum and beta_k = sqrt(k+1) / eta0. Returns the best iterate;
/// the running iterate average lands in trace.averaged.
RunResult run_dual_averaging(const Oracle& oracle, Eigen::VectorXd w0,
                             const OptimizerConfig& config);

/// Fixed-step gradient descent. Stops at gradient norm <= tolerance; ten
/// consecutive objective increases trip a divergence guard that ends the run
/// with Termination::line_search_failure and the best iterate.
RunResult run_gradient(const Oracle& oracle, Eigen::VectorXd w0,
                       const OptimizerConfig& config);

/// Accelerated gradient with t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2
/// extrapolation and function-value adaptive restart (momentum resets when
/// the objective rises). Two oracle calls per iteration.
RunResult run_nesterov(const Oracle& oracle, Eigen::VectorXd w0,
                       const OptimizerConfig& config);

/// Limited-memory BFGS with two-loop recursion and a strong Wolfe line
/// search (cubic interpolation, at most ls_max_trials evaluations).
/// Curvature pairs with s'y <= 1e-10 ||s|| ||y|| are skipped. Stops at
/// ||grad|| <= tolerance * max(1, ||w||); a failed line search ends the run
/// with the best iterate so far.
RunResult run_lbfgs(const Oracle& oracle, Eigen::VectorXd w0,
                    const OptimizerConfig& config);

/// Minibatch SGD with momentum over seeded epoch shuffles:
/// v <- momentum v - eta_t g_batch, w <- w + v, with
/// eta_t = step * decay^floor(epoch / decay_period). One trace record per
/// epoch with the full-batch objective; returns the best recorded iterate.
/// A non-finite objective aborts with std::runtime_error.
RunResult run_sgd(const BatchOracle& oracle, Eigen::Index n_rows,
                  Eigen::VectorXd w0, const OptimizerConfig& config);

}  // namespace sqlearn
