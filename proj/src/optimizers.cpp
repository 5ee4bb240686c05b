#include "sqlearn/optimizers.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>

#include "sqlearn/rng.hpp"

namespace sqlearn {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct BestTracker {
  Eigen::VectorXd w;
  double f;
  void offer(const Eigen::VectorXd& cand, double value) {
    if (value < f) {
      f = value;
      w = cand;
    }
  }
};

}  // namespace

void validate(const OptimizerConfig& config, Algorithm algorithm) {
  if (config.max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  if (!(config.step > 0.0)) throw std::invalid_argument("step must be positive");
  if (!(config.tolerance >= 0.0))
    throw std::invalid_argument("tolerance must be non-negative");
  if (algorithm == Algorithm::sgd) {
    if (config.batch_size < 1)
      throw std::invalid_argument("sgd requires batch_size >= 1");
    if (!(config.momentum >= 0.0 && config.momentum < 1.0))
      throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(config.decay > 0.0 && config.decay <= 1.0))
      throw std::invalid_argument("decay must lie in (0, 1]");
    if (config.decay_period < 1)
      throw std::invalid_argument("decay_period must be >= 1");
  }
  if (algorithm == Algorithm::lbfgs) {
    if (config.lbfgs_memory < 1)
      throw std::invalid_argument("lbfgs_memory must be >= 1");
    if (config.ls_max_trials < 1)
      throw std::invalid_argument("ls_max_trials must be >= 1");
    if (!(config.wolfe_c1 > 0.0 && config.wolfe_c1 < config.wolfe_c2 &&
          config.wolfe_c2 < 1.0))
      throw std::invalid_argument("need 0 < c1 < c2 < 1");
  }
}

RunResult run_subgradient(const Oracle& oracle, Eigen::VectorXd w0,
                          const OptimizerConfig& config) {
  validate(config, Algorithm::subgradient);
  const auto start = Clock::now();
  RunResult res;
  Eigen::VectorXd w = std::move(w0);
  OracleOutput out = oracle(w);
  BestTracker best{w, out.value};
  res.trace.records.push_back(
      {0, out.value, out.gradient.norm(), config.step, seconds_since(start)});
  for (int k = 0; k < config.max_iter; ++k) {
    if (out.gradient.norm() <= config.tolerance) {
      res.trace.termination = Termination::converged;
      break;
    }
    const double eta = config.step / std::sqrt(static_cast<double>(k + 1));
    w -= eta * out.gradient;
    out = oracle(w);
    best.offer(w, out.value);
    res.trace.records.push_back(
        {k + 1, out.value, out.gradient.norm(), eta, seconds_since(start)});
  }
  res.weights = best.w;
  res.objective = best.f;
  return res;
}

RunResult run_dual_averaging(const Oracle& oracle, Eigen::VectorXd w0,
                             const OptimizerConfig& config) {
  validate(config, Algorithm::dual_averaging);
  const auto start = Clock::now();
  RunResult res;
  const Eigen::VectorXd origin = w0;
  Eigen::VectorXd w = std::move(w0);
  Eigen::VectorXd grad_sum = Eigen::VectorXd::Zero(origin.size());
  Eigen::VectorXd iterate_sum = origin;
  int visited = 1;
  OracleOutput out = oracle(w);
  BestTracker best{w, out.value};
  res.trace.records.push_back(
      {0, out.value, out.gradient.norm(), config.step, seconds_since(start)});
  for (int k = 0; k < config.max_iter; ++k) {
    if (out.gradient.norm() <= config.tolerance) {
      res.trace.termination = Termination::converged;
      break;
    }
    grad_sum += out.gradient;
    const double beta = std::sqrt(static_cast<double>(k + 1)) / config.step;
    w = origin - grad_sum / beta;
    out = oracle(w);
    best.offer(w, out.value);
    iterate_sum += w;
    ++visited;
    res.trace.records.push_back(
        {k + 1, out.value, out.gradient.norm(), 1.0 / beta,
         seconds_since(start)});
  }
  res.trace.averaged = iterate_sum / static_cast<double>(visited);
  res.weights = best.w;
  res.objective = best.f;
  return res;
}

RunResult run_gradient(const Oracle& oracle, Eigen::VectorXd w0,
                       const OptimizerConfig& config) {
  validate(config, Algorithm::gradient);
  const auto start = Clock::now();
  RunResult res;
  Eigen::VectorXd w = std::move(w0);
  OracleOutput out = oracle(w);
  BestTracker best{w, out.value};
  res.trace.records.push_back(
      {0, out.value, out.gradient.norm(), config.step, seconds_since(start)});
  double prev = out.value;
  int rises = 0;
  for (int k = 0; k < config.max_iter; ++k) {
    if (out.gradient.norm() <= config.tolerance) {
      res.trace.termination = Termination::converged;
      break;
    }
    w -= config.step * out.gradient;
    out = oracle(w);
    best.offer(w, out.value);
    res.trace.records.push_back({k + 1, out.value, out.gradient.norm(),
                                 config.step, seconds_since(start)});
    rises = out.value > prev ? rises + 1 : 0;
    prev = out.value;
    if (rises >= 10) {
      // fixed step is too long for this objective; report it like a failed
      // search rather than walking off
      res.trace.termination = Termination::line_search_failure;
      res.weights = best.w;
      res.objective = best.f;
      return res;
    }
  }
  res.weights = w;
  res.objective = out.value;
  return res;
}

RunResult run_nesterov(const Oracle& oracle, Eigen::VectorXd w0,
                       const OptimizerConfig& config) {
  validate(config, Algorithm::nesterov);
  const auto start = Clock::now();
  RunResult res;
  Eigen::VectorXd w = std::move(w0);
  Eigen::VectorXd y = w;
  double t = 1.0;
  OracleOutput at_w = oracle(w);
  res.trace.records.push_back(
      {0, at_w.value, at_w.gradient.norm(), config.step, seconds_since(start)});
  for (int k = 0; k < config.max_iter; ++k) {
    if (at_w.gradient.norm() <= config.tolerance) {
      res.trace.termination = Termination::converged;
      break;
    }
    const OracleOutput at_y = oracle(y);
    Eigen::VectorXd w_next = y - config.step * at_y.gradient;
    const OracleOutput at_next = oracle(w_next);
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (at_next.value > at_w.value) {
      // function-value restart: drop the momentum, keep the iterate
      t_next = 1.0;
      y = w_next;
    } else {
      y = w_next + ((t - 1.0) / t_next) * (w_next - w);
    }
    w = std::move(w_next);
    at_w = at_next;
    t = t_next;
    res.trace.records.push_back({k + 1, at_w.value, at_w.gradient.norm(),
                                 config.step, seconds_since(start)});
  }
  res.weights = w;
  res.objective = at_w.value;
  return res;
}

namespace {

struct LinePoint {
  double alpha;
  double value;
  double slope;  // directional derivative at alpha
  Eigen::VectorXd w;
  Eigen::VectorXd grad;
};

struct WolfeResult {
  bool ok = false;
  LinePoint point;
};

// Strong Wolfe line search: bracketing walk followed by zoom with cubic
// interpolation, spending at most `trials` oracle evaluations in total.
WolfeResult wolfe_search(const Oracle& oracle, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& d, double f0, double slope0,
                         double alpha0, const OptimizerConfig& config) {
  WolfeResult res;
  int evals = 0;
  // best sufficient-decrease point seen anywhere; returned if the budget
  // runs out before the curvature condition is met
  std::optional<LinePoint> fallback;
  const auto armijo = [&](const LinePoint& pt) {
    return pt.value <= f0 + config.wolfe_c1 * pt.alpha * slope0;
  };
  const auto probe = [&](double alpha) {
    LinePoint pt;
    pt.alpha = alpha;
    pt.w = x + alpha * d;
    OracleOutput out = oracle(pt.w);
    pt.value = out.value;
    pt.slope = out.gradient.dot(d);
    pt.grad = std::move(out.gradient);
    ++evals;
    if (armijo(pt) && pt.value < f0 &&
        (!fallback || pt.value < fallback->value))
      fallback = pt;
    return pt;
  };
  const auto curvature = [&](const LinePoint& pt) {
    return std::abs(pt.slope) <= -config.wolfe_c2 * slope0;
  };

  // cubic minimizer of the interpolant through two line points; falls back
  // to bisection when the model is degenerate or leaves the bracket
  const auto interpolate = [](const LinePoint& lo, const LinePoint& hi) {
    const double d1 = lo.slope + hi.slope -
                      3.0 * (lo.value - hi.value) / (lo.alpha - hi.alpha);
    const double disc = d1 * d1 - lo.slope * hi.slope;
    double cand = 0.5 * (lo.alpha + hi.alpha);
    if (disc >= 0.0) {
      const double sgn = hi.alpha > lo.alpha ? 1.0 : -1.0;
      const double d2 = sgn * std::sqrt(disc);
      cand = hi.alpha - (hi.alpha - lo.alpha) * (hi.slope + d2 - d1) /
                            (hi.slope - lo.slope + 2.0 * d2);
    }
    const double left = std::min(lo.alpha, hi.alpha);
    const double right = std::max(lo.alpha, hi.alpha);
    const double margin = 0.1 * (right - left);
    if (!(cand > left + margin && cand < right - margin))
      cand = 0.5 * (left + right);
    return cand;
  };

  const auto zoom = [&](LinePoint lo, LinePoint hi) {
    while (evals < config.ls_max_trials) {
      if (std::abs(hi.alpha - lo.alpha) <=
          1e-16 * std::max(1.0, std::abs(lo.alpha)))
        break;
      LinePoint mid = probe(interpolate(lo, hi));
      if (!armijo(mid) || mid.value >= lo.value) {
        hi = std::move(mid);
        continue;
      }
      if (curvature(mid)) {
        res.ok = true;
        res.point = std::move(mid);
        return;
      }
      if (mid.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
      lo = std::move(mid);
    }
  };

  LinePoint prev;
  prev.alpha = 0.0;
  prev.value = f0;
  prev.slope = slope0;
  double alpha = alpha0;
  bool first = true;
  while (evals < config.ls_max_trials) {
    LinePoint cur = probe(alpha);
    if (!armijo(cur) || (!first && cur.value >= prev.value)) {
      zoom(std::move(prev), std::move(cur));
      break;
    }
    if (curvature(cur)) {
      res.ok = true;
      res.point = std::move(cur);
      return res;
    }
    if (cur.slope >= 0.0) {
      zoom(std::move(cur), std::move(prev));
      break;
    }
    prev = std::move(cur);
    alpha = std::min(2.0 * alpha, 1e20);
    first = false;
  }
  if (!res.ok && fallback) {
    res.ok = true;
    res.point = std::move(*fallback);
  }
  return res;
}

}  // namespace

RunResult run_lbfgs(const Oracle& oracle, Eigen::VectorXd w0,
                    const OptimizerConfig& config) {
  validate(config, Algorithm::lbfgs);
  const auto start = Clock::now();
  RunResult res;
  Eigen::VectorXd x = std::move(w0);
  OracleOutput out = oracle(x);
  double f = out.value;
  Eigen::VectorXd g = out.gradient;
  BestTracker best{x, f};
  res.trace.records.push_back(
      {0, f, g.norm(), 0.0, seconds_since(start)});

  struct Pair {
    Eigen::VectorXd s, y;
    double rho;
  };
  std::deque<Pair> pairs;
  double gamma = 1.0;
  std::vector<double> alpha_buf;

  for (int k = 0; k < config.max_iter; ++k) {
    if (g.norm() <= config.tolerance * std::max(1.0, x.norm())) {
      res.trace.termination = Termination::converged;
      break;
    }

    // two-loop recursion: d = -H g
    Eigen::VectorXd q = g;
    alpha_buf.assign(pairs.size(), 0.0);
    for (std::size_t i = pairs.size(); i-- > 0;) {
      alpha_buf[i] = pairs[i].rho * pairs[i].s.dot(q);
      q -= alpha_buf[i] * pairs[i].y;
    }
    q *= gamma;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double beta = pairs[i].rho * pairs[i].y.dot(q);
      q += (alpha_buf[i] - beta) * pairs[i].s;
    }
    Eigen::VectorXd d = -q;
    double slope = d.dot(g);
    if (!(slope < 0.0)) {
      d = -g;
      slope = d.dot(g);
    }

    const double alpha0 =
        k == 0 ? std::min(1.0, 1.0 / std::max(1.0, g.norm())) : 1.0;
    const WolfeResult ls = wolfe_search(oracle, x, d, f, slope, alpha0, config);
    if (!ls.ok) {
      // a directional derivative at the floating-point floor of f means the
      // search direction is flat, not that the function is kinked
      const bool flat = std::abs(slope) <= 1e-13 * std::max(1.0, std::abs(f));
      res.trace.termination = flat ? Termination::converged
                                   : Termination::line_search_failure;
      best.offer(x, f);
      res.weights = best.w;
      res.objective = best.f;
      return res;
    }

    Eigen::VectorXd s = ls.point.w - x;
    Eigen::VectorXd y = ls.point.grad - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      gamma = sy / y.dot(y);
      pairs.push_back({std::move(s), std::move(y), 1.0 / sy});
      if (static_cast<int>(pairs.size()) > config.lbfgs_memory)
        pairs.pop_front();
    }

    x = ls.point.w;
    f = ls.point.value;
    g = ls.point.grad;
    best.offer(x, f);
    res.trace.records.push_back(
        {k + 1, f, g.norm(), ls.point.alpha, seconds_since(start)});
  }
  res.weights = x;
  res.objective = f;
  return res;
}

RunResult run_sgd(const BatchOracle& oracle, Eigen::Index n_rows,
                  Eigen::VectorXd w0, const OptimizerConfig& config) {
  validate(config, Algorithm::sgd);
  if (n_rows < 1) throw std::invalid_argument("empty distribution");
  const auto start = Clock::now();
  const Eigen::Index m = std::min(config.batch_size, n_rows);
  RunResult res;
  Eigen::VectorXd w = std::move(w0);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(w.size());
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n_rows));
  for (Eigen::Index i = 0; i < n_rows; ++i)
    all[static_cast<std::size_t>(i)] = i;

  OracleOutput out = oracle(w, all);
  if (!std::isfinite(out.value))
    throw std::runtime_error("sgd: non-finite objective at start");
  BestTracker best{w, out.value};
  res.trace.records.push_back(
      {0, out.value, out.gradient.norm(), config.step, seconds_since(start)});

  Rng rng(config.seed);
  for (int epoch = 0; epoch < config.max_iter; ++epoch) {
    const double eta =
        config.step * std::pow(config.decay, epoch / config.decay_period);
    std::vector<Eigen::Index> perm = rng.permutation(n_rows);
    for (Eigen::Index at = 0; at < n_rows; at += m) {
      const Eigen::Index len = std::min(m, n_rows - at);
      const std::span<const Eigen::Index> chunk(
          perm.data() + at, static_cast<std::size_t>(len));
      const OracleOutput bo = oracle(w, chunk);
      v = config.momentum * v - eta * bo.gradient;
      w += v;
    }
    out = oracle(w, all);
    if (!std::isfinite(out.value))
      throw std::runtime_error("sgd: non-finite objective at epoch " +
                               std::to_string(epoch + 1));
    best.offer(w, out.value);
    res.trace.records.push_back(
        {epoch + 1, out.value, out.gradient.norm(), eta, seconds_since(start)});
  }
  res.weights = best.w;
  res.objective = best.f;
  return res;
}

}  // namespace sqlearn
