#include "sqlearn/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "sqlearn/metrics.hpp"
#include "sqlearn/oracles.hpp"
#include "sqlearn/tail_measures.hpp"

namespace sqlearn {

using nlohmann::json;

namespace {

using Eigen::Index;
using Eigen::VectorXd;

// per-operation RNG stream tags
constexpr std::uint64_t kGenStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kShiftStream = 3;
constexpr std::uint64_t kFoldStream = 4;
constexpr std::uint64_t kOptStream = 5;

[[noreturn]] void bad(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& ctx) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) bad("unknown key \"" + key + "\" in " + ctx);
}

double num_field(const json& j, const char* key, double fallback,
                 const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) bad(ctx + "." + key + " must be a number");
  return j[key].get<double>();
}

Index int_field(const json& j, const char* key, Index fallback,
                const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) bad(ctx + "." + key + " must be an integer");
  return j[key].get<Index>();
}

bool bool_field(const json& j, const char* key, bool fallback,
                const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) bad(ctx + "." + key + " must be a boolean");
  return j[key].get<bool>();
}

std::string str_field(const json& j, const char* key,
                      const std::string& fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string()) bad(ctx + "." + key + " must be a string");
  return j[key].get<std::string>();
}

std::vector<double> num_array(const json& j, const char* key,
                              std::vector<double> fallback,
                              const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_array()) bad(ctx + "." + key + " must be an array");
  std::vector<double> out;
  for (const auto& v : j[key]) {
    if (!v.is_number()) bad(ctx + "." + key + " entries must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "subgradient") return Algorithm::subgradient;
  if (name == "dual_averaging") return Algorithm::dual_averaging;
  if (name == "gradient") return Algorithm::gradient;
  if (name == "nesterov") return Algorithm::nesterov;
  if (name == "lbfgs") return Algorithm::lbfgs;
  if (name == "sgd") return Algorithm::sgd;
  bad("unknown algorithm \"" + name + "\"");
}

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::subgradient: return "subgradient";
    case Algorithm::dual_averaging: return "dual_averaging";
    case Algorithm::gradient: return "gradient";
    case Algorithm::nesterov: return "nesterov";
    case Algorithm::lbfgs: return "lbfgs";
    case Algorithm::sgd: return "sgd";
  }
  return "lbfgs";
}

LossKind loss_from_name(const std::string& name) {
  if (name == "squared") return LossKind::squared;
  if (name == "logistic") return LossKind::logistic;
  bad("unknown loss \"" + name + "\"");
}

std::string loss_name(LossKind k) {
  return k == LossKind::squared ? "squared" : "logistic";
}

namespace {

ObjectiveKind objective_from_name(const std::string& name) {
  if (name == "erm") return ObjectiveKind::erm;
  if (name == "superquantile") return ObjectiveKind::superquantile;
  if (name == "smoothed_superquantile")
    return ObjectiveKind::smoothed_superquantile;
  bad("unknown objective type \"" + name + "\"");
}

std::string objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::erm: return "erm";
    case ObjectiveKind::superquantile: return "superquantile";
    case ObjectiveKind::smoothed_superquantile:
      return "smoothed_superquantile";
  }
  return "erm";
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) bad("config must be a JSON object");
  check_keys(j,
             {"dataset", "loss", "objective", "lambda", "algorithm",
              "optimizer", "train_fraction", "shift", "cv", "seeds",
              "standardize", "intercept", "include_traces", "histogram_csv",
              "histogram_bins", "alphas", "mus", "output"},
             "config");
  ExperimentConfig c;

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    if (!d.is_object()) bad("dataset must be an object");
    check_keys(d,
               {"type", "path", "schema", "n", "d", "class_sep",
                "positive_fraction"},
               "dataset");
    c.dataset.type = str_field(d, "type", c.dataset.type, "dataset");
    c.dataset.path = str_field(d, "path", "", "dataset");
    c.dataset.schema = str_field(d, "schema", "", "dataset");
    c.dataset.n = int_field(d, "n", c.dataset.n, "dataset");
    c.dataset.d = int_field(d, "d", c.dataset.d, "dataset");
    c.dataset.class_sep =
        num_field(d, "class_sep", c.dataset.class_sep, "dataset");
    c.dataset.positive_fraction = num_field(
        d, "positive_fraction", c.dataset.positive_fraction, "dataset");
  }
  if (j.contains("loss")) c.loss = loss_from_name(str_field(j, "loss", "", "config"));
  if (j.contains("objective")) {
    const json& o = j["objective"];
    if (!o.is_object()) bad("objective must be an object");
    check_keys(o, {"type", "p", "mu"}, "objective");
    c.objective.kind =
        objective_from_name(str_field(o, "type", "smoothed_superquantile",
                                      "objective"));
    c.objective.p = num_field(o, "p", c.objective.p, "objective");
    c.objective.mu = num_field(o, "mu", c.objective.mu, "objective");
  }
  if (j.contains("lambda")) {
    if (j["lambda"].is_null())
      c.lambda.reset();
    else if (j["lambda"].is_number())
      c.lambda = j["lambda"].get<double>();
    else
      bad("lambda must be a number or null");
  }
  if (j.contains("algorithm"))
    c.algorithm = algorithm_from_name(str_field(j, "algorithm", "", "config"));
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    if (!o.is_object()) bad("optimizer must be an object");
    check_keys(o,
               {"max_iter", "lr", "tolerance", "momentum", "decay",
                "decay_period", "batch_size", "lbfgs_memory", "ls_max_trials",
                "wolfe_c1", "wolfe_c2"},
               "optimizer");
    c.optimizer.max_iter = static_cast<int>(
        int_field(o, "max_iter", c.optimizer.max_iter, "optimizer"));
    c.optimizer.step = num_field(o, "lr", c.optimizer.step, "optimizer");
    c.optimizer.tolerance =
        num_field(o, "tolerance", c.optimizer.tolerance, "optimizer");
    c.optimizer.momentum =
        num_field(o, "momentum", c.optimizer.momentum, "optimizer");
    c.optimizer.decay = num_field(o, "decay", c.optimizer.decay, "optimizer");
    c.optimizer.decay_period = static_cast<int>(
        int_field(o, "decay_period", c.optimizer.decay_period, "optimizer"));
    c.optimizer.batch_size =
        int_field(o, "batch_size", c.optimizer.batch_size, "optimizer");
    c.optimizer.lbfgs_memory = static_cast<int>(
        int_field(o, "lbfgs_memory", c.optimizer.lbfgs_memory, "optimizer"));
    c.optimizer.ls_max_trials = static_cast<int>(
        int_field(o, "ls_max_trials", c.optimizer.ls_max_trials, "optimizer"));
    c.optimizer.wolfe_c1 =
        num_field(o, "wolfe_c1", c.optimizer.wolfe_c1, "optimizer");
    c.optimizer.wolfe_c2 =
        num_field(o, "wolfe_c2", c.optimizer.wolfe_c2, "optimizer");
  }
  c.train_fraction =
      num_field(j, "train_fraction", c.train_fraction, "config");
  if (j.contains("shift")) {
    const json& s = j["shift"];
    if (!s.is_object()) bad("shift must be an object");
    check_keys(s, {"kind", "ratio", "alpha"}, "shift");
    c.shift.kind = str_field(s, "kind", c.shift.kind, "shift");
    c.shift.ratio = num_field(s, "ratio", c.shift.ratio, "shift");
    c.shift.alpha = num_field(s, "alpha", c.shift.alpha, "shift");
  }
  if (j.contains("cv")) {
    const json& v = j["cv"];
    if (!v.is_object()) bad("cv must be an object");
    check_keys(v, {"p_grid", "folds", "stratified", "metric"}, "cv");
    c.cv.p_grid = num_array(v, "p_grid", c.cv.p_grid, "cv");
    c.cv.folds = static_cast<int>(int_field(v, "folds", c.cv.folds, "cv"));
    c.cv.stratified = bool_field(v, "stratified", c.cv.stratified, "cv");
    c.cv.metric = str_field(v, "metric", c.cv.metric, "cv");
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array() || j["seeds"].empty())
      bad("seeds must be a non-empty array");
    c.seeds.clear();
    for (const auto& s : j["seeds"]) {
      if (!s.is_number_integer() || s.get<long long>() < 0)
        bad("seeds entries must be non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  c.standardize_features =
      bool_field(j, "standardize", c.standardize_features, "config");
  c.intercept = bool_field(j, "intercept", c.intercept, "config");
  c.include_traces =
      bool_field(j, "include_traces", c.include_traces, "config");
  c.histogram_csv = bool_field(j, "histogram_csv", c.histogram_csv, "config");
  c.histogram_bins = static_cast<int>(
      int_field(j, "histogram_bins", c.histogram_bins, "config"));
  c.alphas = num_array(j, "alphas", c.alphas, "config");
  c.mus = num_array(j, "mus", c.mus, "config");
  c.output = str_field(j, "output", c.output, "config");
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"type", c.dataset.type},
                  {"path", c.dataset.path},
                  {"schema", c.dataset.schema},
                  {"n", c.dataset.n},
                  {"d", c.dataset.d},
                  {"class_sep", c.dataset.class_sep},
                  {"positive_fraction", c.dataset.positive_fraction}};
  j["loss"] = loss_name(c.loss);
  j["objective"] = {{"type", objective_name(c.objective.kind)},
                    {"p", c.objective.p},
                    {"mu", c.objective.mu}};
  if (c.lambda)
    j["lambda"] = *c.lambda;
  else
    j["lambda"] = nullptr;
  j["algorithm"] = algorithm_name(c.algorithm);
  j["optimizer"] = {{"max_iter", c.optimizer.max_iter},
                    {"lr", c.optimizer.step},
                    {"tolerance", c.optimizer.tolerance},
                    {"momentum", c.optimizer.momentum},
                    {"decay", c.optimizer.decay},
                    {"decay_period", c.optimizer.decay_period},
                    {"batch_size", c.optimizer.batch_size},
                    {"lbfgs_memory", c.optimizer.lbfgs_memory},
                    {"ls_max_trials", c.optimizer.ls_max_trials},
                    {"wolfe_c1", c.optimizer.wolfe_c1},
                    {"wolfe_c2", c.optimizer.wolfe_c2}};
  j["train_fraction"] = c.train_fraction;
  j["shift"] = {{"kind", c.shift.kind},
                {"ratio", c.shift.ratio},
                {"alpha", c.shift.alpha}};
  j["cv"] = {{"p_grid", c.cv.p_grid},
             {"folds", c.cv.folds},
             {"stratified", c.cv.stratified},
             {"metric", c.cv.metric}};
  j["seeds"] = c.seeds;
  j["standardize"] = c.standardize_features;
  j["intercept"] = c.intercept;
  j["include_traces"] = c.include_traces;
  j["histogram_csv"] = c.histogram_csv;
  j["histogram_bins"] = c.histogram_bins;
  j["alphas"] = c.alphas;
  j["mus"] = c.mus;
  j["output"] = c.output;
  return j;
}

unsigned worker_cap() {
  if (const char* env = std::getenv("SQLEARN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1)
      return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

namespace {

template <typename F>
void parallel_for_count(std::size_t count, F&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(std::max(1u, worker_cap()), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  const auto body = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

enum class Command { train, cv, shift_sweep, mu_sweep };

void validate_config(const ExperimentConfig& c, Command cmd) {
  const auto& ds = c.dataset;
  if (ds.type == "csv") {
    if (ds.path.empty()) bad("dataset.path required for csv datasets");
    if (ds.schema.empty()) bad("dataset.schema required for csv datasets");
  } else if (ds.type == "synth_regression" ||
             ds.type == "synth_classification") {
    if (ds.n < 2) bad("dataset.n must be >= 2");
    if (ds.d < 1) bad("dataset.d must be >= 1");
    if (ds.type == "synth_classification") {
      if (!(ds.class_sep >= 0.0)) bad("dataset.class_sep must be >= 0");
      if (!(ds.positive_fraction > 0.0 && ds.positive_fraction < 1.0))
        bad("dataset.positive_fraction must lie in (0, 1)");
    }
  } else {
    bad("unknown dataset.type \"" + ds.type + "\"");
  }
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    bad("train_fraction must lie in (0, 1)");
  if (c.objective.kind != ObjectiveKind::erm &&
      !(c.objective.p >= 0.0 && c.objective.p < 1.0))
    bad("objective.p must lie in [0, 1)");
  if (c.objective.kind == ObjectiveKind::smoothed_superquantile &&
      !(c.objective.mu > 0.0))
    bad("objective.mu must be positive");
  if (c.lambda && !(*c.lambda >= 0.0)) bad("lambda must be >= 0");
  try {
    validate(c.optimizer, c.algorithm);
  } catch (const std::invalid_argument& e) {
    bad(std::string("optimizer: ") + e.what());
  }
  if (c.shift.kind != "none" && c.shift.kind != "downsample_majority" &&
      c.shift.kind != "rebalance")
    bad("unknown shift.kind \"" + c.shift.kind + "\"");
  if (c.shift.kind == "downsample_majority" &&
      !(c.shift.ratio > 0.0 && c.shift.ratio <= 1.0))
    bad("shift.ratio must lie in (0, 1]");
  if (c.shift.kind == "rebalance" &&
      !(c.shift.alpha > 0.0 && c.shift.alpha < 1.0))
    bad("shift.alpha must lie in (0, 1)");
  if (c.seeds.empty()) bad("seeds must be non-empty");
  if (c.histogram_bins < 1) bad("histogram_bins must be >= 1");

  if (cmd == Command::cv) {
    if (c.objective.kind == ObjectiveKind::erm)
      bad("cv tunes the tail level; configure a superquantile objective");
    if (c.cv.folds < 2) bad("cv.folds must be >= 2");
    if (c.cv.p_grid.empty()) bad("cv.p_grid must be non-empty");
    for (const double p : c.cv.p_grid)
      if (!(p >= 0.0 && p < 1.0)) bad("cv.p_grid entries must lie in [0, 1)");
    if (c.cv.metric != "auto" && c.cv.metric != "accuracy" &&
        c.cv.metric != "val_loss_p90")
      bad("cv.metric must be auto, accuracy, or val_loss_p90");
  }
  if (cmd == Command::shift_sweep) {
    if (c.objective.kind == ObjectiveKind::erm)
      bad("shift-sweep compares an ERM baseline against a superquantile "
          "objective; configure the latter");
    if (c.shift.kind != "none")
      bad("shift-sweep applies its own rebalance; set shift.kind to none");
    for (const double a : c.alphas)
      if (!(a > 0.0 && a < 1.0)) bad("alphas entries must lie in (0, 1)");
  }
  if (cmd == Command::mu_sweep) {
    if (c.objective.kind == ObjectiveKind::erm)
      bad("mu-sweep varies the smoothing of a superquantile objective; "
          "configure one");
    for (const double m : c.mus)
      if (!(m > 0.0)) bad("mus entries must be positive");
  }
}

struct Prepared {
  Dataset train;
  Dataset test;
  double lambda;
};

Dataset load_or_generate(const ExperimentConfig& c, std::uint64_t seed) {
  const auto& ds = c.dataset;
  if (ds.type == "csv") return load_csv(ds.path, load_schema(ds.schema));
  const std::uint64_t gen_seed = mix_seed(seed, kGenStream);
  if (ds.type == "synth_regression")
    return synth_regression(ds.n, ds.d, gen_seed);
  return synth_classification(ds.n, ds.d, ds.class_sep, ds.positive_fraction,
                              gen_seed);
}

Prepared prepare(const ExperimentConfig& c, std::uint64_t seed,
                 bool apply_shift) {
  const Dataset full = load_or_generate(c, seed);
  if ((c.loss == LossKind::logistic) !=
      (full.task == Task::binary_classification))
    bad(std::string("loss \"") + loss_name(c.loss) +
        "\" does not match the dataset task");
  if (apply_shift && c.shift.kind != "none" &&
      full.task != Task::binary_classification)
    bad("shift \"" + c.shift.kind + "\" requires a classification task");

  SplitResult split =
      train_test_split(full, c.train_fraction, mix_seed(seed, kSplitStream));
  if (split.test.rows() == 0) throw DataError("empty test split");
  if (c.standardize_features) {
    auto [train, scaler] = standardize(split.train);
    split.train = std::move(train);
    split.test = apply_scaler(scaler, split.test);
  }
  if (c.intercept) {
    split.train = append_intercept(split.train);
    split.test = append_intercept(split.test);
  }
  if (apply_shift && c.shift.kind != "none") {
    const std::uint64_t shift_seed = mix_seed(seed, kShiftStream);
    try {
      split.train = c.shift.kind == "downsample_majority"
                        ? downsample_majority(split.train, c.shift.ratio,
                                              shift_seed)
                        : rebalance(split.train, c.shift.alpha, shift_seed);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());  // data-dependent (class availability)
    }
  }
  Prepared out;
  out.lambda =
      c.lambda ? *c.lambda : 1.0 / static_cast<double>(split.train.rows());
  out.train = std::move(split.train);
  out.test = std::move(split.test);
  return out;
}

RunResult fit(const ExperimentConfig& c, const Dataset& train, double lambda,
              const ObjectiveSpec& obj, std::uint64_t opt_seed,
              std::vector<std::string>* warnings) {
  const VectorXd w0 = VectorXd::Zero(train.cols());
  if (c.algorithm == Algorithm::sgd) {
    const double p_eff = obj.kind == ObjectiveKind::erm ? 0.0 : obj.p;
    const std::optional<double> mu_opt =
        obj.kind == ObjectiveKind::smoothed_superquantile
            ? std::optional<double>(obj.mu)
            : std::nullopt;
    OptimizerConfig cfg = c.optimizer;
    cfg.seed = opt_seed;
    const Index m = std::min<Index>(cfg.batch_size, train.rows());
    if (warnings && p_eff > 0.0 &&
        static_cast<double>(m) * (1.0 - p_eff) < 1.0)
      warnings->push_back(
          "batch of " + std::to_string(m) + " holds less than one tail point "
          "at p = " + std::to_string(p_eff));
    const BatchOracle oracle = [&](const VectorXd& w,
                                   std::span<const Index> idx) {
      return minibatch_oracle(c.loss, w, train, idx, p_eff, mu_opt, lambda);
    };
    return run_sgd(oracle, train.rows(), w0, cfg);
  }

  const Oracle oracle = [&](const VectorXd& w) {
    switch (obj.kind) {
      case ObjectiveKind::erm:
        return erm_oracle(c.loss, w, train, lambda);
      case ObjectiveKind::superquantile:
        return superquantile_subgradient(c.loss, w, train, obj.p, lambda);
      case ObjectiveKind::smoothed_superquantile:
        return smoothed_oracle(c.loss, w, train, obj.p, obj.mu, lambda);
    }
    throw std::logic_error("unreachable");
  };
  switch (c.algorithm) {
    case Algorithm::subgradient:
      return run_subgradient(oracle, w0, c.optimizer);
    case Algorithm::dual_averaging:
      return run_dual_averaging(oracle, w0, c.optimizer);
    case Algorithm::gradient:
      return run_gradient(oracle, w0, c.optimizer);
    case Algorithm::nesterov:
      return run_nesterov(oracle, w0, c.optimizer);
    default:
      return run_lbfgs(oracle, w0, c.optimizer);
  }
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iter: return "max_iter";
    case Termination::line_search_failure: return "line_search_failure";
  }
  return "max_iter";
}

VectorXd test_losses(LossKind kind, const Dataset& data, const VectorXd& z) {
  VectorXd out(z.size());
  for (Index i = 0; i < z.size(); ++i)
    out[i] = loss_value(kind, z[i], data.targets[i]);
  return out;
}

json metrics_json(const Metrics& m, Task task) {
  json j;
  j["mean_loss"] = m.mean_loss;
  j["loss_q50"] = m.loss_q50;
  j["loss_q90"] = m.loss_q90;
  j["loss_qp"] = m.loss_qp;
  j["p_used"] = m.p_used;
  if (task == Task::binary_classification) {
    j["accuracy"] = *m.accuracy;
    j["precision"] = *m.precision;
    j["precision_undefined"] = m.precision_undefined;
    j["positive_label"] = m.positive_label;
  }
  return j;
}

json histogram_json(const Histogram& h) {
  return {{"edges", h.edges}, {"counts", h.counts}};
}

json trace_json(const RunTrace& t) {
  json records = json::array();
  for (const auto& r : t.records)
    records.push_back({{"iter", r.iter},
                       {"objective", r.objective},
                       {"grad_norm", r.grad_norm},
                       {"step", r.step},
                       {"elapsed_sec", r.elapsed_sec}});
  return {{"termination", termination_name(t.termination)},
          {"records", std::move(records)}};
}

double report_p(const ObjectiveSpec& obj) {
  return obj.kind == ObjectiveKind::erm ? 0.9 : obj.p;
}

// per-seed evaluation block shared by train and cv
json seed_block(const ExperimentConfig& c, const Prepared& prep,
                const RunResult& run, std::uint64_t seed, double p) {
  const VectorXd z = prep.test.features * run.weights;
  const Metrics m = compute_metrics(z, prep.test.targets, prep.test.task, p);
  const VectorXd losses = test_losses(c.loss, prep.test, z);
  json block;
  block["seed"] = seed;
  block["lambda"] = prep.lambda;
  block["train_objective"] = run.objective;
  block["termination"] = termination_name(run.trace.termination);
  block["metrics"] = metrics_json(m, prep.test.task);
  block["histogram"] = histogram_json(histogram(losses, c.histogram_bins));
  if (c.include_traces) block["trace"] = trace_json(run.trace);
  return block;
}

// mean/std (population) of every numeric metric present across all seeds
json aggregate_metrics(const std::vector<json>& blocks) {
  json agg = json::object();
  if (blocks.empty()) return agg;
  for (const auto& [key, v0] : blocks.front()["metrics"].items()) {
    if (!v0.is_number()) continue;
    bool everywhere = true;
    double sum = 0.0;
    for (const auto& b : blocks) {
      if (!b["metrics"].contains(key) || !b["metrics"][key].is_number()) {
        everywhere = false;
        break;
      }
      sum += b["metrics"][key].get<double>();
    }
    if (!everywhere) continue;
    const double n = static_cast<double>(blocks.size());
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& b : blocks) {
      const double d = b["metrics"][key].get<double>() - mean;
      ss += d * d;
    }
    agg[key] = {{"mean", mean}, {"std", std::sqrt(ss / n)}};
  }
  return agg;
}

long long now_unix_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

json report_shell(const ExperimentConfig& c, const char* command,
                  const std::vector<std::vector<std::string>>& warnings) {
  json report;
  report["schema_version"] = 1;
  report["command"] = command;
  report["generated_at_unix_ms"] = now_unix_ms();
  report["config"] = config_to_json(c);
  json warn = json::array();
  for (std::size_t si = 0; si < warnings.size(); ++si)
    for (const auto& w : warnings[si])
      warn.push_back("seed " + std::to_string(c.seeds[si]) + ": " + w);
  report["warnings"] = std::move(warn);
  return report;
}

}  // namespace

json cmd_train(const ExperimentConfig& c) {
  validate_config(c, Command::train);
  const std::size_t ns = c.seeds.size();
  std::vector<json> blocks(ns);
  std::vector<std::vector<std::string>> warnings(ns);
  parallel_for_count(ns, [&](std::size_t si) {
    const std::uint64_t seed = c.seeds[si];
    const Prepared prep = prepare(c, seed, true);
    const RunResult run = fit(c, prep.train, prep.lambda, c.objective,
                              mix_seed(seed, kOptStream), &warnings[si]);
    blocks[si] = seed_block(c, prep, run, seed, report_p(c.objective));
  });
  json report = report_shell(c, "train", warnings);
  report["seeds"] = blocks;
  report["aggregate"] = aggregate_metrics(blocks);
  check_report(report);
  return report;
}

json cmd_cv(const ExperimentConfig& c) {
  validate_config(c, Command::cv);
  std::vector<double> grid = c.cv.p_grid;
  std::sort(grid.begin(), grid.end());
  const std::size_t ns = c.seeds.size();
  std::vector<json> blocks(ns);
  std::vector<std::vector<std::string>> warnings(ns);

  parallel_for_count(ns, [&](std::size_t si) {
    const std::uint64_t seed = c.seeds[si];
    const Prepared prep = prepare(c, seed, true);
    const Index n_tr = prep.train.rows();
    const int k = c.cv.folds;
    if (n_tr < k) throw DataError("fewer training rows than cv folds");

    // round-robin fold ids over a seeded shuffle (within class when
    // stratified)
    std::vector<int> fold_of(static_cast<std::size_t>(n_tr));
    {
      Rng rng(mix_seed(seed, kFoldStream));
      const std::vector<Index> perm = rng.permutation(n_tr);
      if (c.cv.stratified && prep.train.task == Task::binary_classification) {
        int counters[2] = {0, 0};
        for (const Index row : perm) {
          const int cls = prep.train.targets[row] == 1.0 ? 1 : 0;
          fold_of[static_cast<std::size_t>(row)] = counters[cls]++ % k;
        }
      } else {
        for (std::size_t pos = 0; pos < perm.size(); ++pos)
          fold_of[static_cast<std::size_t>(perm[pos])] =
              static_cast<int>(pos) % k;
      }
    }

    std::string metric = c.cv.metric;
    if (metric == "auto")
      metric = prep.train.task == Task::binary_classification
                   ? "accuracy"
                   : "val_loss_p90";
    if (metric == "accuracy" &&
        prep.train.task != Task::binary_classification)
      bad("cv.metric accuracy needs a classification task");
    const bool maximize = metric == "accuracy";

    json table = json::array();
    double best_score = maximize ? -std::numeric_limits<double>::infinity()
                                 : std::numeric_limits<double>::infinity();
    double best_p = grid.front();
    for (const double p : grid) {
      ObjectiveSpec obj = c.objective;
      obj.p = p;
      double score_sum = 0.0;
      for (int f = 0; f < k; ++f) {
        std::vector<Index> tr_rows, va_rows;
        for (Index i = 0; i < n_tr; ++i)
          (fold_of[static_cast<std::size_t>(i)] == f ? va_rows : tr_rows)
              .push_back(i);
        Dataset ftrain;
        ftrain.task = prep.train.task;
        ftrain.has_intercept = prep.train.has_intercept;
        ftrain.feature_names = prep.train.feature_names;
        ftrain.features.resize(static_cast<Index>(tr_rows.size()),
                               prep.train.cols());
        ftrain.targets.resize(static_cast<Index>(tr_rows.size()));
        for (std::size_t i = 0; i < tr_rows.size(); ++i) {
          ftrain.features.row(static_cast<Index>(i)) =
              prep.train.features.row(tr_rows[i]);
          ftrain.targets[static_cast<Index>(i)] =
              prep.train.targets[tr_rows[i]];
        }
        const double fold_lambda =
            c.lambda ? *c.lambda : 1.0 / static_cast<double>(ftrain.rows());
        const RunResult run =
            fit(c, ftrain, fold_lambda, obj,
                mix_seed(mix_seed(seed, kOptStream), 1000 + f), &warnings[si]);

        Eigen::VectorXd zv(static_cast<Index>(va_rows.size()));
        Eigen::VectorXd yv(static_cast<Index>(va_rows.size()));
        for (std::size_t i = 0; i < va_rows.size(); ++i) {
          zv[static_cast<Index>(i)] =
              prep.train.features.row(va_rows[i]).dot(run.weights);
          yv[static_cast<Index>(i)] = prep.train.targets[va_rows[i]];
        }
        if (prep.train.task == Task::binary_classification) {
          const double first = yv.size() ? yv[0] : 0.0;
          if ((yv.array() == first).all())
            warnings[si].push_back("fold " + std::to_string(f) +
                                   " has a single class");
        }
        if (metric == "accuracy") {
          const Metrics m =
              compute_metrics(zv, yv, prep.train.task, p);
          score_sum += *m.accuracy;
        } else {
          Eigen::VectorXd losses(zv.size());
          for (Index i = 0; i < zv.size(); ++i)
            losses[i] = loss_value(c.loss, zv[i], yv[i]);
          score_sum += quantile(losses, 0.9);
        }
      }
      const double score = score_sum / k;
      table.push_back({{"p", p}, {"score", score}});
      const bool better = maximize ? score > best_score : score < best_score;
      if (better) {
        best_score = score;
        best_p = p;
      }
    }

    ObjectiveSpec final_obj = c.objective;
    final_obj.p = best_p;
    const RunResult run = fit(c, prep.train, prep.lambda, final_obj,
                              mix_seed(seed, kOptStream), &warnings[si]);
    json block = seed_block(c, prep, run, seed, best_p);
    block["best_p"] = best_p;
    block["cv_table"] = std::move(table);
    block["cv_metric"] = metric;
    blocks[si] = std::move(block);
  });

  json report = report_shell(c, "cv", warnings);
  report["seeds"] = blocks;
  report["aggregate"] = aggregate_metrics(blocks);
  json selected = json::array();
  for (const double p : grid) {
    int count = 0;
    for (const auto& b : blocks)
      if (b["best_p"].get<double>() == p) ++count;
    selected.push_back({{"p", p}, {"times_selected", count}});
  }
  report["selected_p"] = std::move(selected);
  check_report(report);
  return report;
}

json cmd_shift_sweep(const ExperimentConfig& c) {
  validate_config(c, Command::shift_sweep);
  std::vector<double> alphas = c.alphas;
  if (alphas.empty()) {
    alphas.resize(100);
    for (int i = 0; i < 100; ++i)
      alphas[static_cast<std::size_t>(i)] = (i + 1) / 101.0;
  }
  const std::size_t ns = c.seeds.size();
  const std::size_t na = alphas.size();

  struct Cell {
    bool ok = false;
    double sq_acc = 0, sq_loss = 0, erm_acc = 0, erm_loss = 0;
  };
  std::vector<std::vector<Cell>> cells(ns, std::vector<Cell>(na));
  std::vector<std::vector<std::string>> warnings(ns);

  parallel_for_count(ns, [&](std::size_t si) {
    const std::uint64_t seed = c.seeds[si];
    const Prepared base = prepare(c, seed, false);
    if (base.train.task != Task::binary_classification)
      bad("shift-sweep requires a classification task");
    for (std::size_t ai = 0; ai < na; ++ai) {
      Dataset shifted;
      try {
        shifted = rebalance(base.train, alphas[ai],
                            mix_seed(mix_seed(seed, kShiftStream), ai));
      } catch (const std::invalid_argument& e) {
        warnings[si].push_back("alpha " + std::to_string(alphas[ai]) +
                               " skipped: " + e.what());
        continue;
      }
      const double lambda =
          c.lambda ? *c.lambda : 1.0 / static_cast<double>(shifted.rows());
      const std::uint64_t opt_seed =
          mix_seed(mix_seed(seed, kOptStream), ai);
      const RunResult sq =
          fit(c, shifted, lambda, c.objective, opt_seed, &warnings[si]);
      ObjectiveSpec erm;
      erm.kind = ObjectiveKind::erm;
      const RunResult base_run =
          fit(c, shifted, lambda, erm, opt_seed, &warnings[si]);

      const VectorXd z_sq = base.test.features * sq.weights;
      const VectorXd z_erm = base.test.features * base_run.weights;
      const Metrics m_sq =
          compute_metrics(z_sq, base.test.targets, base.test.task,
                          c.objective.p);
      const Metrics m_erm = compute_metrics(
          z_erm, base.test.targets, base.test.task, c.objective.p);
      Cell& cell = cells[si][ai];
      cell.ok = true;
      cell.sq_acc = *m_sq.accuracy;
      cell.sq_loss = m_sq.mean_loss;
      cell.erm_acc = *m_erm.accuracy;
      cell.erm_loss = m_erm.mean_loss;
    }
  });

  // flatten alpha-major, seed-minor
  json arrays = {{"alpha", json::array()}, {"seed", json::array()},
                 {"sq_accuracy", json::array()},
                 {"sq_mean_loss", json::array()},
                 {"erm_accuracy", json::array()},
                 {"erm_mean_loss", json::array()}};
  std::vector<double> sq_acc, sq_loss, erm_acc, erm_loss;
  for (std::size_t ai = 0; ai < na; ++ai) {
    for (std::size_t si = 0; si < ns; ++si) {
      const Cell& cell = cells[si][ai];
      if (!cell.ok) continue;
      arrays["alpha"].push_back(alphas[ai]);
      arrays["seed"].push_back(c.seeds[si]);
      arrays["sq_accuracy"].push_back(cell.sq_acc);
      arrays["sq_mean_loss"].push_back(cell.sq_loss);
      arrays["erm_accuracy"].push_back(cell.erm_acc);
      arrays["erm_mean_loss"].push_back(cell.erm_loss);
      sq_acc.push_back(cell.sq_acc);
      sq_loss.push_back(cell.sq_loss);
      erm_acc.push_back(cell.erm_acc);
      erm_loss.push_back(cell.erm_loss);
    }
  }
  const auto to_vec = [](const std::vector<double>& v) {
    return Eigen::Map<const VectorXd>(v.data(),
                                      static_cast<Index>(v.size()));
  };
  json report = report_shell(c, "shift_sweep", warnings);
  report["alphas"] = alphas;
  report["arrays"] = std::move(arrays);
  json hists = json::object();
  json agg = json::object();
  if (!sq_acc.empty()) {
    const auto stat = [](const std::vector<double>& v) {
      const double n = static_cast<double>(v.size());
      double mean = 0;
      for (const double x : v) mean += x;
      mean /= n;
      double ss = 0;
      for (const double x : v) ss += (x - mean) * (x - mean);
      return json{{"mean", mean}, {"std", std::sqrt(ss / n)}};
    };
    hists["sq_accuracy"] =
        histogram_json(histogram(to_vec(sq_acc), c.histogram_bins));
    hists["sq_mean_loss"] =
        histogram_json(histogram(to_vec(sq_loss), c.histogram_bins));
    hists["erm_accuracy"] =
        histogram_json(histogram(to_vec(erm_acc), c.histogram_bins));
    hists["erm_mean_loss"] =
        histogram_json(histogram(to_vec(erm_loss), c.histogram_bins));
    agg["sq_accuracy"] = stat(sq_acc);
    agg["sq_mean_loss"] = stat(sq_loss);
    agg["erm_accuracy"] = stat(erm_acc);
    agg["erm_mean_loss"] = stat(erm_loss);
  }
  report["histograms"] = std::move(hists);
  report["aggregate"] = std::move(agg);
  check_report(report);
  return report;
}

json cmd_mu_sweep(const ExperimentConfig& c) {
  validate_config(c, Command::mu_sweep);
  std::vector<double> mus = c.mus;
  if (mus.empty())
    for (int e = -6; e <= 9; ++e) mus.push_back(std::pow(10.0, e));
  std::sort(mus.begin(), mus.end());
  const double p = c.objective.p;
  const std::size_t ns = c.seeds.size();
  std::vector<json> blocks(ns);
  std::vector<std::vector<std::string>> warnings(ns);

  parallel_for_count(ns, [&](std::size_t si) {
    const std::uint64_t seed = c.seeds[si];
    const Prepared prep = prepare(c, seed, true);

    ObjectiveSpec erm;
    erm.kind = ObjectiveKind::erm;
    const RunResult erm_run = fit(c, prep.train, prep.lambda, erm,
                                  mix_seed(seed, kOptStream), &warnings[si]);
    const VectorXd u_erm =
        batch_losses(c.loss, erm_run.weights, prep.train);
    json block;
    block["seed"] = seed;
    block["lambda"] = prep.lambda;
    block["erm_reference"] = {
        {"mean_loss", u_erm.mean()},
        {"exact_superquantile", superquantile(u_erm, p)}};

    json entries = json::array();
    for (std::size_t mi = 0; mi < mus.size(); ++mi) {
      const double mu = mus[mi];
      ObjectiveSpec obj;
      obj.kind = ObjectiveKind::smoothed_superquantile;
      obj.p = p;
      obj.mu = mu;
      const RunResult run =
          fit(c, prep.train, prep.lambda, obj,
              mix_seed(mix_seed(seed, kOptStream), mi), &warnings[si]);
      const VectorXd u = batch_losses(c.loss, run.weights, prep.train);
      const double smoothed_noridge =
          smoothed_oracle(c.loss, run.weights, prep.train, p, mu, 0.0).value;
      const VectorXd z = prep.test.features * run.weights;
      Eigen::VectorXd tl(z.size());
      for (Index i = 0; i < z.size(); ++i)
        tl[i] = loss_value(c.loss, z[i], prep.test.targets[i]);
      entries.push_back({{"mu", mu},
                         {"termination",
                          termination_name(run.trace.termination)},
                         {"smoothed_value", smoothed_noridge},
                         {"exact_value", superquantile(u, p)},
                         {"test_mean_loss", tl.mean()}});
    }
    block["entries"] = std::move(entries);
    blocks[si] = std::move(block);
  });

  json report = report_shell(c, "mu_sweep", warnings);
  report["seeds"] = blocks;
  json by_mu = json::array();
  for (std::size_t mi = 0; mi < mus.size(); ++mi) {
    double sm = 0, ex = 0;
    int failures = 0;
    for (const auto& b : blocks) {
      const auto& e = b["entries"][mi];
      sm += e["smoothed_value"].get<double>();
      ex += e["exact_value"].get<double>();
      failures += e["termination"].get<std::string>() ==
                  "line_search_failure";
    }
    by_mu.push_back({{"mu", mus[mi]},
                     {"smoothed_value_mean", sm / static_cast<double>(ns)},
                     {"exact_value_mean", ex / static_cast<double>(ns)},
                     {"line_search_failures", failures}});
  }
  report["aggregate"] = {{"by_mu", std::move(by_mu)}};
  check_report(report);
  return report;
}

void check_report(const json& report) {
  const auto fail = [](const std::string& what) {
    throw std::runtime_error("report schema violation: " + what);
  };
  if (!report.is_object()) fail("not an object");
  if (!report.contains("schema_version") ||
      report["schema_version"] != 1)
    fail("schema_version must be 1");
  for (const char* key : {"command", "generated_at_unix_ms", "config",
                          "warnings", "aggregate"})
    if (!report.contains(key)) fail(std::string("missing ") + key);
  if (!report["warnings"].is_array()) fail("warnings must be an array");
  if (!report["config"].is_object()) fail("config must be an object");
  const std::string cmd = report["command"].get<std::string>();
  if (cmd == "train" || cmd == "cv" || cmd == "mu_sweep") {
    if (!report.contains("seeds") || !report["seeds"].is_array() ||
        report["seeds"].empty())
      fail("seeds must be a non-empty array");
    for (const auto& b : report["seeds"]) {
      if (!b.contains("seed") || !b.contains("lambda")) fail("seed block");
      if (cmd != "mu_sweep") {
        for (const char* key :
             {"metrics", "histogram", "train_objective", "termination"})
          if (!b.contains(key)) fail(std::string("seed block missing ") + key);
        const auto& h = b["histogram"];
        if (!h.contains("edges") || !h.contains("counts") ||
            h["edges"].size() != h["counts"].size() + 1)
          fail("histogram edges/counts mismatch");
      } else {
        if (!b.contains("entries") || !b.contains("erm_reference"))
          fail("mu_sweep seed block");
      }
      if (cmd == "cv" && (!b.contains("best_p") || !b.contains("cv_table")))
        fail("cv seed block");
    }
  }
  if (cmd == "shift_sweep") {
    if (!report.contains("arrays")) fail("shift_sweep arrays");
    const auto& arrays = report["arrays"];
    const std::size_t len = arrays["alpha"].size();
    for (const char* key : {"seed", "sq_accuracy", "sq_mean_loss",
                            "erm_accuracy", "erm_mean_loss"})
      if (arrays[key].size() != len) fail("array length mismatch");
    if (!report.contains("histograms")) fail("shift_sweep histograms");
  }
}

void write_report(const json& report, const std::string& path,
                  bool histogram_csv) {
  check_report(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report: " + path);
  out << report.dump(2) << "\n";
  if (!out) throw DataError("report write failed: " + path);
  if (!histogram_csv) return;

  std::string stem = path;
  if (stem.size() > 5 && stem.substr(stem.size() - 5) == ".json")
    stem = stem.substr(0, stem.size() - 5);
  std::ofstream csv(stem + "_hist.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write histogram csv next to " + path);
  csv << "name,bin_lo,bin_hi,count\n";
  const auto dump_hist = [&csv](const std::string& name, const json& h) {
    const auto& edges = h["edges"];
    const auto& counts = h["counts"];
    for (std::size_t b = 0; b < counts.size(); ++b)
      csv << name << "," << edges[b].dump() << "," << edges[b + 1].dump()
          << "," << counts[b].dump() << "\n";
  };
  const std::string cmd = report["command"].get<std::string>();
  if (cmd == "train" || cmd == "cv") {
    for (const auto& b : report["seeds"])
      dump_hist("seed_" + std::to_string(b["seed"].get<std::uint64_t>()),
                b["histogram"]);
  } else if (cmd == "shift_sweep") {
    for (const auto& [name, h] : report["histograms"].items())
      dump_hist(name, h);
  }
}

}  // namespace sqlearn
