// End-to-end acceptance gate. Each numbered check prints one PASS/FAIL line;
// the process exits nonzero if any check fails. Checks with a runtime budget
// fail when they exceed it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "helpers_bruteforce.hpp"
#include "sqlearn/data.hpp"
#include "sqlearn/experiments.hpp"
#include "sqlearn/losses.hpp"
#include "sqlearn/metrics.hpp"
#include "sqlearn/oracles.hpp"
#include "sqlearn/optimizers.hpp"
#include "sqlearn/rng.hpp"
#include "sqlearn/tail_measures.hpp"

using Eigen::Index;
using Eigen::VectorXd;
namespace sq = sqlearn;
using nlohmann::json;

namespace {

int g_failures = 0;

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void report(int id, const char* label, bool pass, const std::string& detail) {
  if (!pass) ++g_failures;
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", id,
              label, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* spec, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), spec, a, b, c);
  return buf;
}

VectorXd random_vector(sq::Rng& rng, Index n, double scale) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

// ---------------------------------------------------------------------------

void criterion_1_tail_measure_equivalence() {
  const Timer t;
  sq::Rng rng(1001);
  double worst = 0.0;
  bool ok = true;
  for (int rep = 0; rep < 1000 && ok; ++rep) {
    const Index n = 1 + static_cast<Index>(rng.below(200));
    VectorXd u = random_vector(rng, n, 10.0);
    if (rep % 5 == 0)
      for (Index i = 0; i < n; ++i) u[i] = std::round(u[i]);
    const double p = rng.uniform() * 0.999;
    const double a = sq::superquantile(u, p);
    const double b = sq::superquantile_integral_oracle(u, p);
    const double rel = std::abs(a - b) / std::max(1.0, std::abs(a));
    worst = std::max(worst, rel);
    if (rel > 1e-12) ok = false;
    // monotonicity in p plus mean/max bounds on a sub-sample of cases
    if (rep % 10 == 0) {
      double prev = u.mean() - 1e-12;
      for (double q = 0.0; q < 1.0; q += 0.1) {
        const double s = sq::superquantile(u, q);
        if (s < prev - 1e-10 || s < u.mean() - 1e-10 ||
            s > u.maxCoeff() + 1e-10)
          ok = false;
        prev = s;
      }
    }
  }
  const double sec = t.seconds();
  report(1, "tail measure equals its sorted-integral form", ok && sec < 5.0,
         fmt("worst rel %.2e, %.2fs of 5s budget", worst, sec));
}

void criterion_2_dual_weight_equivalence() {
  const Timer t;
  sq::Rng rng(1002);
  double worst = 0.0, worst_sum = 0.0, worst_box = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const Index n = 1 + static_cast<Index>(rng.below(50));
    VectorXd u = random_vector(rng, n, 6.0);
    if (rep % 4 == 0)
      for (Index i = 0; i < n; ++i) u[i] = std::round(u[i]);
    const double p = rng.uniform() * 0.99;
    const double mu = std::pow(10.0, -3.0 + 5.0 * rng.uniform());
    const auto dw = sq::smoothed_dual_weights(u, p, mu);
    const VectorXd ref = sq::testing::bruteforce_dual_weights(u, p, mu);
    worst = std::max(worst, (dw.q - ref).lpNorm<Eigen::Infinity>());
    worst_sum = std::max(worst_sum, std::abs(dw.q.sum() - 1.0));
    const double cap = 1.0 / (static_cast<double>(n) * (1.0 - p));
    worst_box = std::max(worst_box, std::max(-dw.q.minCoeff(),
                                             dw.q.maxCoeff() - cap));
  }
  const double sec = t.seconds();
  const bool ok =
      worst <= 1e-6 && worst_sum <= 1e-9 && worst_box <= 1e-12 && sec < 30.0;
  report(2, "dual weights match the reference projector", ok,
         fmt("worst gap %.2e, sum err %.2e, %.2fs of 30s", worst, worst_sum,
             sec));
}

void criterion_3_sandwich() {
  const sq::Dataset data = sq::synth_classification(80, 5, 2.0, 0.5, 1003);
  sq::Rng rng(1004);
  bool ok = true;
  double worst_low = 0.0, worst_high = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const VectorXd w = random_vector(rng, 5, 1.5);
    const double p = rng.uniform() * 0.99;
    const double mu = std::pow(10.0, -3.0 + 4.0 * rng.uniform());
    const double exact = sq::superquantile_subgradient(sq::LossKind::logistic,
                                                       w, data, p, 0.02)
                             .value;
    const double smooth =
        sq::smoothed_oracle(sq::LossKind::logistic, w, data, p, mu, 0.02)
            .value;
    worst_low = std::max(worst_low, smooth - exact);
    worst_high = std::max(worst_high, exact - smooth - 0.5 * mu);
    if (smooth > exact + 1e-9 || exact > smooth + 0.5 * mu + 1e-9) ok = false;
  }
  report(3, "smoothed value brackets the exact value within mu/2", ok,
         fmt("max lower viol %.2e, max upper viol %.2e", worst_low,
             worst_high));
}

void criterion_4_gradient_fidelity() {
  const sq::Dataset data = sq::synth_classification(60, 4, 2.0, 0.5, 1005);
  sq::Rng rng(1006);
  double worst = 0.0;
  for (const double p : {0.5, 0.9, 0.99}) {
    for (const double mu : {0.01, 0.1, 1.0}) {
      for (int rep = 0; rep < 20; ++rep) {
        const VectorXd w = random_vector(rng, 4, 1.0);
        const auto out =
            sq::smoothed_oracle(sq::LossKind::logistic, w, data, p, mu, 0.02);
        VectorXd fd(4);
        for (Index j = 0; j < 4; ++j) {
          VectorXd wp = w, wm = w;
          const double h = 1e-6;
          wp[j] += h;
          wm[j] -= h;
          fd[j] = (sq::smoothed_oracle(sq::LossKind::logistic, wp, data, p,
                                       mu, 0.02)
                       .value -
                   sq::smoothed_oracle(sq::LossKind::logistic, wm, data, p,
                                       mu, 0.02)
                       .value) /
                  (2 * h);
        }
        const double rel =
            (out.gradient - fd).lpNorm<Eigen::Infinity>() /
            std::max(1.0, out.gradient.lpNorm<Eigen::Infinity>());
        worst = std::max(worst, rel);
      }
    }
  }
  // pointwise loss slopes against central differences
  double worst_slope = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const double z = 5.0 * rng.normal();
    const double y = rep % 2 ? 1.0 : 0.0;
    for (const auto kind : {sq::LossKind::squared, sq::LossKind::logistic}) {
      const double h = 1e-6;
      const double fd = (sq::loss_value(kind, z + h, y) -
                         sq::loss_value(kind, z - h, y)) /
                        (2 * h);
      const double rel = std::abs(fd - sq::loss_slope(kind, z, y)) /
                         std::max(1.0, std::abs(sq::loss_slope(kind, z, y)));
      worst_slope = std::max(worst_slope, rel);
    }
  }
  const bool ok = worst <= 1e-5 && worst_slope <= 1e-6;
  report(4, "smoothed gradients match finite differences", ok,
         fmt("worst surrogate rel %.2e, worst slope rel %.2e", worst,
             worst_slope));
}

void criterion_5_subgradient_inequality() {
  const sq::Dataset data = sq::synth_classification(40, 3, 1.5, 0.5, 1007);
  sq::Rng rng(1008);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const VectorXd w = random_vector(rng, 3, 2.0);
    const VectorXd w2 = random_vector(rng, 3, 2.0);
    const auto at_w = sq::superquantile_subgradient(sq::LossKind::logistic, w,
                                                    data, 0.85, 0.01);
    const double rhs = at_w.value + at_w.gradient.dot(w2 - w);
    const double lhs = sq::superquantile_subgradient(sq::LossKind::logistic,
                                                     w2, data, 0.85, 0.01)
                           .value;
    worst = std::max(worst, rhs - lhs);
  }
  report(5, "exact oracle emits valid subgradients", worst <= 1e-9,
         fmt("worst violation %.2e", worst));
}

void criterion_6_limit_collapses() {
  const sq::Dataset data = sq::synth_classification(60, 4, 2.0, 0.5, 1009);
  sq::Rng rng(1010);
  double worst_p0 = 0.0, worst_mu = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const VectorXd w = random_vector(rng, 4, 1.0);
    const auto erm = sq::erm_oracle(sq::LossKind::logistic, w, data, 0.02);
    const auto exact0 = sq::superquantile_subgradient(sq::LossKind::logistic,
                                                      w, data, 0.0, 0.02);
    const auto smooth0 = sq::smoothed_oracle(sq::LossKind::logistic, w, data,
                                             0.0, 0.1, 0.02);
    worst_p0 = std::max({worst_p0, std::abs(exact0.value - erm.value),
                         (exact0.gradient - erm.gradient)
                             .lpNorm<Eigen::Infinity>(),
                         std::abs(smooth0.value - erm.value),
                         (smooth0.gradient - erm.gradient)
                             .lpNorm<Eigen::Infinity>()});
    const auto big = sq::smoothed_oracle(sq::LossKind::logistic, w, data, 0.9,
                                         1e9, 0.02);
    worst_mu = std::max({worst_mu, std::abs(big.value - erm.value),
                         (big.gradient - erm.gradient)
                             .lpNorm<Eigen::Infinity>()});
  }
  const bool ok = worst_p0 <= 1e-12 && worst_mu <= 1e-6;
  report(6, "tail level zero and huge smoothing collapse to the mean", ok,
         fmt("p0 gap %.2e, huge-mu gap %.2e", worst_p0, worst_mu));
}

void criterion_7_optimizer_cross_agreement() {
  const Timer t;
  const sq::Dataset data = sq::synth_classification(50, 5, 2.0, 0.5, 1011);
  const double p = 0.8, mu = 0.1, lambda = 1.0 / 50.0;
  const sq::Oracle smooth = [&](const VectorXd& w) {
    return sq::smoothed_oracle(sq::LossKind::logistic, w, data, p, mu,
                               lambda);
  };
  const sq::Oracle exact = [&](const VectorXd& w) {
    return sq::superquantile_subgradient(sq::LossKind::logistic, w, data, p,
                                         lambda);
  };
  const sq::BatchOracle batched = [&](const VectorXd& w,
                                      std::span<const Index> idx) {
    return sq::minibatch_oracle(sq::LossKind::logistic, w, data, idx, p, mu,
                                lambda);
  };
  const VectorXd w0 = VectorXd::Zero(5);

  sq::OptimizerConfig ref_cfg;
  ref_cfg.max_iter = 2000;
  ref_cfg.tolerance = 1e-10;
  const auto ref = sq::run_lbfgs(smooth, w0, ref_cfg);
  const double R = smooth(ref.weights).value;
  const double denom = std::max(1.0, std::abs(R));

  const auto rel_smooth = [&](const VectorXd& w) {
    return std::abs(smooth(w).value - R) / denom;
  };
  const auto rel_exact = [&](const VectorXd& w) {
    return std::abs(exact(w).value - R) / denom;
  };

  sq::OptimizerConfig cfg;
  cfg.step = 0.05;
  cfg.max_iter = 4000;
  cfg.tolerance = 1e-9;
  const double r_grad = rel_smooth(sq::run_gradient(smooth, w0, cfg).weights);
  const double r_nest = rel_smooth(sq::run_nesterov(smooth, w0, cfg).weights);

  sq::OptimizerConfig scfg;
  scfg.step = 0.05;
  scfg.max_iter = 1500;
  scfg.momentum = 0.9;
  scfg.decay = 0.97;
  scfg.decay_period = 20;
  scfg.batch_size = 50;
  scfg.seed = 0;
  const double r_sgd =
      rel_smooth(sq::run_sgd(batched, 50, w0, scfg).weights);

  sq::OptimizerConfig ncfg;
  ncfg.step = 0.2;
  ncfg.max_iter = 4000;
  const double r_sub = rel_exact(sq::run_subgradient(exact, w0, ncfg).weights);
  ncfg.step = 0.5;
  const double r_da =
      rel_exact(sq::run_dual_averaging(exact, w0, ncfg).weights);

  const double sec = t.seconds();
  const bool ok = r_grad <= 1e-2 && r_nest <= 1e-2 && r_sgd <= 1e-2 &&
                  r_sub <= 5e-2 && r_da <= 5e-2 && sec < 60.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "grad %.1e nesterov %.1e sgd %.1e subgrad %.1e dual-avg %.1e, "
                "%.1fs of 60s",
                r_grad, r_nest, r_sgd, r_sub, r_da, sec);
  report(7, "optimizers agree on one smoothed tail problem", ok, buf);
}

void criterion_8_heavy_tail_regression_tradeoff() {
  const Timer t;
  sq::ExperimentConfig c;
  c.dataset.type = "synth_regression";
  c.dataset.n = 12500;  // 80% train split leaves 10^4 training rows
  c.dataset.d = 40;
  c.loss = sq::LossKind::squared;
  c.objective.kind = sq::ObjectiveKind::smoothed_superquantile;
  c.objective.p = 0.9;
  c.objective.mu = 0.1;
  c.optimizer.max_iter = 500;
  // the noise is independent of the zero-mean features, so the trade-off
  // between mean and tail plays out in the intercept: the mean objective
  // absorbs the average noise, the tail objective shifts further toward the
  // outlier band
  c.intercept = true;
  c.seeds = {0, 1, 2, 3, 4};
  const json tail = sq::cmd_train(c);
  c.objective.kind = sq::ObjectiveKind::erm;
  const json erm = sq::cmd_train(c);

  int tradeoff = 0;
  for (std::size_t s = 0; s < 5; ++s) {
    const auto& mt = tail["seeds"][s]["metrics"];
    const auto& me = erm["seeds"][s]["metrics"];
    const bool tail_better =
        mt["loss_q90"].get<double>() < me["loss_q90"].get<double>();
    const bool mean_worse =
        mt["mean_loss"].get<double>() > me["mean_loss"].get<double>();
    tradeoff += tail_better && mean_worse;
  }
  const double sec = t.seconds();
  const bool ok = tradeoff >= 4 && sec < 120.0;
  report(8, "tail objective trades mean loss for tail loss on heavy noise",
         ok, fmt("%.0f of 5 seeds show the trade-off, %.1fs of 120s",
                 static_cast<double>(tradeoff), sec));
}

void criterion_9_shift_robustness() {
  sq::ExperimentConfig c;
  c.dataset.type = "synth_classification";
  c.dataset.n = 800;
  c.dataset.d = 5;
  c.dataset.class_sep = 1.8;
  c.dataset.positive_fraction = 0.3;
  c.shift.kind = "downsample_majority";
  c.shift.ratio = 0.10;
  c.cv.p_grid = {0.8, 0.85, 0.9, 0.95, 0.99};
  c.cv.folds = 5;
  c.optimizer.max_iter = 200;
  c.seeds = {0, 1, 2, 3, 4};
  const json tuned = sq::cmd_cv(c);

  sq::ExperimentConfig e = c;
  e.objective.kind = sq::ObjectiveKind::erm;
  const json erm = sq::cmd_train(e);

  const double acc_sq =
      tuned["aggregate"]["accuracy"]["mean"].get<double>();
  const double acc_erm =
      erm["aggregate"]["accuracy"]["mean"].get<double>();
  bool ok = acc_sq >= acc_erm;
  std::string detail =
      fmt("synthetic: tuned tail %.4f vs mean objective %.4f", acc_sq,
          acc_erm);

  // optional real-data band check when the csv is available locally
  const std::string csv = "data/australian.csv";
  const std::string schema = "data/australian.schema.json";
  if (std::filesystem::exists(csv) && std::filesystem::exists(schema)) {
    sq::ExperimentConfig rc = c;
    rc.dataset.type = "csv";
    rc.dataset.path = csv;
    rc.dataset.schema = schema;
    const json rt = sq::cmd_cv(rc);
    sq::ExperimentConfig re = rc;
    re.objective.kind = sq::ObjectiveKind::erm;
    const json rb = sq::cmd_train(re);
    const double a_sq = rt["aggregate"]["accuracy"]["mean"].get<double>();
    const double a_erm = rb["aggregate"]["accuracy"]["mean"].get<double>();
    const bool band_ok = a_sq >= 0.69 - 0.04 && a_sq <= 0.69 + 0.04 &&
                         a_erm >= 0.65 - 0.03 && a_erm <= 0.65 + 0.03;
    ok = ok && band_ok;
    detail += fmt("; credit csv: %.3f / %.3f vs bands 0.69+-0.04 / "
                  "0.65+-0.03",
                  a_sq, a_erm);
  } else {
    detail += "; credit csv absent, band check skipped";
  }
  report(9, "tuned tail objective resists a downsampling shift", ok, detail);
}

void criterion_10_smoothing_regimes() {
  sq::ExperimentConfig c;
  c.dataset.type = "synth_classification";
  c.dataset.n = 400;
  c.dataset.d = 5;
  c.dataset.class_sep = 1.5;
  c.objective.p = 0.9;
  c.optimizer.max_iter = 400;
  c.optimizer.tolerance = 1e-10;
  c.seeds = {0, 1, 2, 3, 4};
  c.mus.clear();
  for (int e = -6; e <= 9; ++e) c.mus.push_back(std::pow(10.0, e));
  const json r = sq::cmd_mu_sweep(c);

  int tiny_mu_failures = 0;
  bool sandwich_ok = true, erm_match_ok = true;
  double worst_sandwich = 0.0, worst_match = 0.0;
  for (const auto& block : r["seeds"]) {
    const double erm_sq =
        block["erm_reference"]["exact_superquantile"].get<double>();
    for (const auto& entry : block["entries"]) {
      const double mu = entry["mu"].get<double>();
      const double gap = entry["exact_value"].get<double>() -
                         entry["smoothed_value"].get<double>();
      if (mu <= 1e-4 + 1e-16 &&
          entry["termination"].get<std::string>() == "line_search_failure")
        ++tiny_mu_failures;
      if (mu >= 1e-2 - 1e-12 && mu <= 1.0 + 1e-12) {
        worst_sandwich =
            std::max(worst_sandwich, std::max(-gap, gap - 0.5 * mu));
        if (gap < -1e-9 || gap > 0.5 * mu + 1e-9) sandwich_ok = false;
      }
      if (mu >= 1e6 - 1.0) {
        const double rel = std::abs(entry["exact_value"].get<double>() -
                                    erm_sq) /
                           std::max(1.0, std::abs(erm_sq));
        worst_match = std::max(worst_match, rel);
        if (rel > 1e-2) erm_match_ok = false;
      }
    }
  }
  const bool ok = tiny_mu_failures > 0 && sandwich_ok && erm_match_ok;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "%d failures at mu<=1e-4, sandwich viol %.2e, erm-match rel "
                "%.2e",
                tiny_mu_failures, worst_sandwich, worst_match);
  report(10, "smoothing sweep shows the three regimes", ok, buf);
}

void criterion_11_tail_estimate_stabilizes() {
  sq::Rng wrng(1013);
  std::vector<VectorXd> grid;
  for (int i = 0; i < 20; ++i) grid.push_back(random_vector(wrng, 3, 0.5));

  std::vector<std::vector<double>> gaps(3);  // per n, across seeds
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const sq::Dataset big =
        sq::synth_classification(100000, 3, 2.0, 0.5, 2000 + seed);
    const auto tail_at = [&](Index n, const VectorXd& w) {
      VectorXd u(n);
      for (Index i = 0; i < n; ++i) {
        const double z = big.features.row(i).dot(w);
        u[i] = sq::loss_value(sq::LossKind::logistic, z, big.targets[i]);
      }
      return sq::superquantile(u, 0.9);
    };
    const Index sizes[3] = {100, 1000, 10000};
    for (int k = 0; k < 3; ++k) {
      double gap = 0.0;
      for (const VectorXd& w : grid)
        gap = std::max(gap, std::abs(tail_at(sizes[k], w) -
                                     tail_at(sizes[k] * 10, w)));
      gaps[static_cast<std::size_t>(k)].push_back(gap);
    }
  }
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double m100 = median(gaps[0]);
  const double m1k = median(gaps[1]);
  const double m10k = median(gaps[2]);
  const bool ok = m100 > m1k && m1k > m10k;
  report(11, "tail estimates tighten as the sample grows", ok,
         fmt("median gaps %.3e > %.3e > %.3e", m100, m1k, m10k));
}

void criterion_12_determinism() {
  const auto strip = [](json r) {
    r.erase("generated_at_unix_ms");
    return r;
  };
  sq::ExperimentConfig c;
  c.dataset.type = "synth_classification";
  c.dataset.n = 150;
  c.dataset.d = 4;
  c.optimizer.max_iter = 80;
  c.seeds = {0, 1};
  bool ok = strip(sq::cmd_train(c)) == strip(sq::cmd_train(c));

  sq::ExperimentConfig cv = c;
  cv.cv.p_grid = {0.5, 0.9};
  cv.cv.folds = 3;
  ok = ok && strip(sq::cmd_cv(cv)) == strip(sq::cmd_cv(cv));

  sq::ExperimentConfig sweep = c;
  sweep.alphas = {0.4, 0.7};
  ok = ok && strip(sq::cmd_shift_sweep(sweep)) ==
                 strip(sq::cmd_shift_sweep(sweep));

  sq::ExperimentConfig mus = c;
  mus.mus = {0.05, 5.0};
  ok = ok && strip(sq::cmd_mu_sweep(mus)) == strip(sq::cmd_mu_sweep(mus));

  // an sgd run exercises the shuffling path
  sq::ExperimentConfig sgd = c;
  sgd.algorithm = sq::Algorithm::sgd;
  sgd.optimizer.batch_size = 32;
  sgd.optimizer.max_iter = 20;
  ok = ok && strip(sq::cmd_train(sgd)) == strip(sq::cmd_train(sgd));

  report(12, "identical configs reproduce reports bit for bit", ok,
         ok ? "train, cv, both sweeps, sgd" : "mismatch found");
}

}  // namespace

int main() {
  criterion_1_tail_measure_equivalence();
  criterion_2_dual_weight_equivalence();
  criterion_3_sandwich();
  criterion_4_gradient_fidelity();
  criterion_5_subgradient_inequality();
  criterion_6_limit_collapses();
  criterion_7_optimizer_cross_agreement();
  criterion_8_heavy_tail_regression_tradeoff();
  criterion_9_shift_robustness();
  criterion_10_smoothing_regimes();
  criterion_11_tail_estimate_stabilizes();
  criterion_12_determinism();
  if (g_failures) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all 12 criteria passed\n");
  return 0;
}
