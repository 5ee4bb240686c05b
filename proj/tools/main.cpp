// Command-line front end: train, cv, shift-sweep, mu-sweep, generate.
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sqlearn/data.hpp"
#include "sqlearn/experiments.hpp"

namespace {

using sqlearn::ConfigError;
using sqlearn::ExperimentConfig;

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return sqlearn::config_from_json(j);
}

struct CommonFlags {
  std::string config_path;
  std::optional<double> p, mu, lambda, lr, momentum, decay;
  std::optional<std::string> algorithm, loss, output;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iter, decay_period;
  std::optional<long long> batch_size;
  bool traces = false;
  bool hist_csv = false;
  std::vector<double> alphas, mus;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "JSON config file");
  sub->add_option("--p", f.p, "tail level in [0, 1)");
  sub->add_option("--mu", f.mu, "smoothing parameter (> 0)");
  sub->add_option("--algorithm", f.algorithm,
                  "subgradient | dual_averaging | gradient | nesterov | "
                  "lbfgs | sgd");
  sub->add_option("--loss", f.loss, "squared | logistic");
  sub->add_option("--lambda", f.lambda, "ridge weight (default 1/n_train)");
  sub->add_option("--seed", f.seed, "single seed, replaces the seed list");
  sub->add_option("--max-iter", f.max_iter, "iteration budget");
  sub->add_option("--batch-size", f.batch_size, "sgd minibatch size");
  sub->add_option("--lr", f.lr, "step size");
  sub->add_option("--momentum", f.momentum, "sgd momentum in [0, 1)");
  sub->add_option("--decay", f.decay, "sgd step decay factor in (0, 1]");
  sub->add_option("--decay-period", f.decay_period,
                  "epochs between sgd step decays");
  sub->add_option("--output", f.output, "report path (default report.json)");
  sub->add_flag("--traces", f.traces, "embed per-iteration traces");
  sub->add_flag("--histogram-csv", f.hist_csv,
                "also write histogram bins as csv");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c = load_config(f.config_path);
  if (f.p) c.objective.p = *f.p;
  if (f.mu) c.objective.mu = *f.mu;
  if (f.algorithm) c.algorithm = sqlearn::algorithm_from_name(*f.algorithm);
  if (f.loss) c.loss = sqlearn::loss_from_name(*f.loss);
  if (f.lambda) c.lambda = *f.lambda;
  if (f.seed) c.seeds = {*f.seed};
  if (f.max_iter) c.optimizer.max_iter = *f.max_iter;
  if (f.batch_size) c.optimizer.batch_size = *f.batch_size;
  if (f.lr) c.optimizer.step = *f.lr;
  if (f.momentum) c.optimizer.momentum = *f.momentum;
  if (f.decay) c.optimizer.decay = *f.decay;
  if (f.decay_period) c.optimizer.decay_period = *f.decay_period;
  if (f.output) c.output = *f.output;
  if (f.traces) c.include_traces = true;
  if (f.hist_csv) c.histogram_csv = true;
  if (!f.alphas.empty()) c.alphas = f.alphas;
  if (!f.mus.empty()) c.mus = f.mus;
  return c;
}

void emit(const ExperimentConfig& c, const nlohmann::json& report) {
  sqlearn::write_report(report, c.output, c.histogram_csv);
  std::cout << "wrote " << c.output << "\n";
  for (const auto& w : report["warnings"])
    std::cerr << "warning: " << w.get<std::string>() << "\n";
}

struct GenerateFlags {
  std::string kind = "synth_classification";
  std::uint64_t seed = 0;
  long long n = 1000;
  long long d = 10;
  double class_sep = 2.0;
  double positive_fraction = 0.5;
  std::string output = "data.csv";
  std::string schema_out;
};

int run_generate(const GenerateFlags& g) {
  if (g.n < 1) throw ConfigError("--n must be >= 1");
  if (g.d < 1) throw ConfigError("--d must be >= 1");
  sqlearn::Dataset data;
  if (g.kind == "synth_regression") {
    data = sqlearn::synth_regression(g.n, g.d, g.seed);
  } else if (g.kind == "synth_classification") {
    if (!(g.positive_fraction > 0.0 && g.positive_fraction < 1.0))
      throw ConfigError("--positive-fraction must lie in (0, 1)");
    data = sqlearn::synth_classification(g.n, g.d, g.class_sep,
                                         g.positive_fraction, g.seed);
  } else {
    throw ConfigError("unknown --kind \"" + g.kind + "\"");
  }
  sqlearn::save_csv(g.output, data);
  const std::string schema_path =
      g.schema_out.empty() ? g.output + ".schema.json" : g.schema_out;
  sqlearn::save_schema(schema_path, data);
  std::cout << "wrote " << g.output << " and " << schema_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"superquantile-based learning"};
  app.require_subcommand(1);

  CommonFlags train_f, cv_f, shift_f, mu_f;
  CLI::App* train = app.add_subcommand(
      "train", "fit one model per seed and report test metrics");
  add_common(train, train_f);
  CLI::App* cv = app.add_subcommand(
      "cv", "cross-validate the tail level over a grid, then refit");
  add_common(cv, cv_f);
  CLI::App* shift = app.add_subcommand(
      "shift-sweep",
      "rebalance training labels over a grid of mixture weights and compare "
      "against an unweighted-mean baseline");
  add_common(shift, shift_f);
  shift->add_option("--alphas", shift_f.alphas,
                    "rebalance mixture weights in (0, 1)");
  CLI::App* mu = app.add_subcommand(
      "mu-sweep", "refit across smoothing parameters and track objectives");
  add_common(mu, mu_f);
  mu->add_option("--mus", mu_f.mus, "smoothing parameters (> 0)");

  GenerateFlags gen_f;
  CLI::App* gen =
      app.add_subcommand("generate", "write a synthetic dataset as csv");
  gen->add_option("--kind", gen_f.kind,
                  "synth_regression | synth_classification");
  gen->add_option("--n", gen_f.n, "rows");
  gen->add_option("--d", gen_f.d, "feature columns");
  gen->add_option("--class-sep", gen_f.class_sep, "class separation");
  gen->add_option("--positive-fraction", gen_f.positive_fraction,
                  "fraction of label-1 rows");
  gen->add_option("--seed", gen_f.seed, "generator seed");
  gen->add_option("--output", gen_f.output, "csv path");
  gen->add_option("--schema-out", gen_f.schema_out,
                  "schema path (default <output>.schema.json)");

  try {
    app.parse(argc, argv);
    if (*gen) return run_generate(gen_f);
    if (*train) {
      const ExperimentConfig c = resolve(train_f);
      emit(c, sqlearn::cmd_train(c));
    } else if (*cv) {
      const ExperimentConfig c = resolve(cv_f);
      emit(c, sqlearn::cmd_cv(c));
    } else if (*shift) {
      const ExperimentConfig c = resolve(shift_f);
      emit(c, sqlearn::cmd_shift_sweep(c));
    } else if (*mu) {
      const ExperimentConfig c = resolve(mu_f);
      emit(c, sqlearn::cmd_mu_sweep(c));
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sqlearn::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
