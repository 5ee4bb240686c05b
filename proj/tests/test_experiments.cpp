#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "sqlearn/experiments.hpp"

namespace sq = sqlearn;
using nlohmann::json;

namespace {

// small, fast synthetic classification setup shared by most cases
sq::ExperimentConfig tiny_config() {
  sq::ExperimentConfig c;
  c.dataset.type = "synth_classification";
  c.dataset.n = 120;
  c.dataset.d = 4;
  c.optimizer.max_iter = 120;
  c.seeds = {1, 2};
  return c;
}

json strip_timestamp(json report) {
  report.erase("generated_at_unix_ms");
  return report;
}

}  // namespace

TEST_CASE("config parsing applies defaults and rejects unknown keys") {
  const sq::ExperimentConfig c = sq::config_from_json(json::object());
  CHECK(c.objective.p == 0.9);
  CHECK(c.algorithm == sq::Algorithm::lbfgs);
  CHECK(c.seeds.size() == 5);
  CHECK(c.train_fraction == 0.8);
  CHECK(!c.lambda.has_value());

  try {
    (void)sq::config_from_json(json{{"objectve", 1}});
    FAIL("expected ConfigError");
  } catch (const sq::ConfigError& e) {
    CHECK(std::string(e.what()).find("objectve") != std::string::npos);
  }
  CHECK_THROWS_AS(
      (void)sq::config_from_json(json{{"objective", {{"pp", 0.5}}}}),
      sq::ConfigError);
  CHECK_THROWS_AS((void)sq::config_from_json(json{{"loss", "hinge"}}),
                  sq::ConfigError);
  CHECK_THROWS_AS((void)sq::config_from_json(json{{"seeds", json::array()}}),
                  sq::ConfigError);
  CHECK_THROWS_AS(
      (void)sq::config_from_json(json{{"train_fraction", "most"}}),
      sq::ConfigError);
}

TEST_CASE("config survives a json round trip") {
  sq::ExperimentConfig c = tiny_config();
  c.lambda = 0.25;
  c.objective.kind = sq::ObjectiveKind::superquantile;
  c.algorithm = sq::Algorithm::subgradient;
  c.cv.stratified = true;
  const sq::ExperimentConfig back = sq::config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("mean objective at tail level zero matches the mean objective") {
  sq::ExperimentConfig erm = tiny_config();
  erm.objective.kind = sq::ObjectiveKind::erm;
  sq::ExperimentConfig tail0 = tiny_config();
  tail0.objective.kind = sq::ObjectiveKind::superquantile;
  tail0.objective.p = 0.0;
  const json a = sq::cmd_train(erm);
  const json b = sq::cmd_train(tail0);
  for (std::size_t s = 0; s < 2; ++s) {
    const double fa = a["seeds"][s]["train_objective"].get<double>();
    const double fb = b["seeds"][s]["train_objective"].get<double>();
    CHECK(std::abs(fa - fb) <= 1e-8);
  }
}

TEST_CASE("training reports are deterministic apart from the timestamp") {
  sq::ExperimentConfig c = tiny_config();
  const json a = strip_timestamp(sq::cmd_train(c));
  const json b = strip_timestamp(sq::cmd_train(c));
  CHECK(a == b);
}

TEST_CASE("train report carries the documented shape") {
  sq::ExperimentConfig c = tiny_config();
  c.include_traces = true;
  const json r = sq::cmd_train(c);
  CHECK(r["schema_version"] == 1);
  CHECK(r["command"] == "train");
  CHECK(r["config"]["dataset"]["n"] == 120);
  REQUIRE(r["seeds"].size() == 2);
  const auto& block = r["seeds"][0];
  CHECK(block["seed"] == 1);
  CHECK(block["lambda"].get<double>() ==
        doctest::Approx(1.0 / 96.0));  // 80% of 120 rows
  CHECK(block["metrics"].contains("accuracy"));
  CHECK(block["metrics"].contains("mean_loss"));
  CHECK(block["trace"]["records"].size() >= 1);
  const auto& agg = r["aggregate"];
  CHECK(agg["accuracy"].contains("mean"));
  CHECK(agg["accuracy"].contains("std"));
  const auto& h = block["histogram"];
  Eigen::Index total = 0;
  for (const auto& cnt : h["counts"]) total += cnt.get<Eigen::Index>();
  CHECK(total == 24);  // the 20% test split
}

TEST_CASE("sgd path produces a tail-size warning when batches are too "
          "small") {
  sq::ExperimentConfig c = tiny_config();
  c.algorithm = sq::Algorithm::sgd;
  c.optimizer.batch_size = 4;
  c.optimizer.max_iter = 3;
  c.objective.p = 0.9;  // 4 * (1 - 0.9) < 1
  c.seeds = {3};
  const json r = sq::cmd_train(c);
  REQUIRE(r["warnings"].size() >= 1);
  const std::string w = r["warnings"][0].get<std::string>();
  CHECK(w.find("seed 3") != std::string::npos);
  CHECK(w.find("tail") != std::string::npos);
}

TEST_CASE("mismatched loss and task is a configuration error") {
  sq::ExperimentConfig c = tiny_config();
  c.loss = sq::LossKind::squared;
  CHECK_THROWS_AS((void)sq::cmd_train(c), sq::ConfigError);
  sq::ExperimentConfig r = tiny_config();
  r.dataset.type = "synth_regression";
  r.loss = sq::LossKind::logistic;
  CHECK_THROWS_AS((void)sq::cmd_train(r), sq::ConfigError);
}

TEST_CASE("invalid field values are configuration errors") {
  sq::ExperimentConfig c = tiny_config();
  c.objective.p = 1.0;
  CHECK_THROWS_AS((void)sq::cmd_train(c), sq::ConfigError);
  c = tiny_config();
  c.lambda = -0.5;
  CHECK_THROWS_AS((void)sq::cmd_train(c), sq::ConfigError);
  c = tiny_config();
  c.optimizer.step = -1.0;
  CHECK_THROWS_AS((void)sq::cmd_train(c), sq::ConfigError);
  c = tiny_config();
  c.shift.kind = "mystery";
  CHECK_THROWS_AS((void)sq::cmd_train(c), sq::ConfigError);
  c = tiny_config();
  c.dataset.type = "parquet";
  CHECK_THROWS_AS((void)sq::cmd_train(c), sq::ConfigError);
}

TEST_CASE("cross-validation refuses a mean objective and regression "
          "accuracy") {
  sq::ExperimentConfig c = tiny_config();
  c.objective.kind = sq::ObjectiveKind::erm;
  CHECK_THROWS_AS((void)sq::cmd_cv(c), sq::ConfigError);

  sq::ExperimentConfig r = tiny_config();
  r.dataset.type = "synth_regression";
  r.loss = sq::LossKind::squared;
  r.cv.metric = "accuracy";
  r.cv.p_grid = {0.5, 0.9};
  r.seeds = {1};
  CHECK_THROWS_AS((void)sq::cmd_cv(r), sq::ConfigError);
}

TEST_CASE("cross-validation prefers the smallest tail level on ties") {
  // fully separated blobs: every tail level scores validation accuracy 1,
  // so the scan must keep the first (smallest) grid entry
  sq::ExperimentConfig c = tiny_config();
  c.dataset.class_sep = 12.0;
  c.cv.p_grid = {0.5, 0.8, 0.9};
  c.cv.folds = 3;
  c.seeds = {4};
  const json r = sq::cmd_cv(c);
  CHECK(r["seeds"][0]["best_p"] == 0.5);
  CHECK(r["seeds"][0]["cv_metric"] == "accuracy");
  REQUIRE(r["seeds"][0]["cv_table"].size() == 3);
  CHECK(r["selected_p"][0]["times_selected"] == 1);
}

TEST_CASE("cross-validation on regression uses the tail loss metric") {
  sq::ExperimentConfig c;
  c.dataset.type = "synth_regression";
  c.dataset.n = 90;
  c.dataset.d = 3;
  c.loss = sq::LossKind::squared;
  c.cv.p_grid = {0.5, 0.9};
  c.cv.folds = 3;
  c.optimizer.max_iter = 80;
  c.seeds = {5};
  const json r = sq::cmd_cv(c);
  CHECK(r["seeds"][0]["cv_metric"] == "val_loss_p90");
  CHECK(r["seeds"][0].contains("best_p"));
}

TEST_CASE("rebalance sweep compares tail and mean objectives per alpha") {
  sq::ExperimentConfig c = tiny_config();
  c.dataset.positive_fraction = 0.3;
  c.alphas = {0.3, 0.6};
  c.optimizer.max_iter = 60;
  const json r = sq::cmd_shift_sweep(c);
  CHECK(r["command"] == "shift_sweep");
  const auto& arrays = r["arrays"];
  REQUIRE(arrays["alpha"].size() == 4);  // 2 alphas x 2 seeds
  CHECK(arrays["alpha"][0] == 0.3);
  CHECK(arrays["alpha"][1] == 0.3);
  CHECK(arrays["alpha"][2] == 0.6);
  CHECK(arrays["seed"][0] == 1);
  CHECK(arrays["seed"][1] == 2);
  for (const char* key :
       {"sq_accuracy", "erm_accuracy", "sq_mean_loss", "erm_mean_loss"}) {
    CHECK(arrays[key].size() == 4);
    CHECK(r["histograms"].contains(key));
    CHECK(r["aggregate"][key].contains("mean"));
  }
}

TEST_CASE("rebalance sweep rejects a pre-shifted config") {
  sq::ExperimentConfig c = tiny_config();
  c.shift.kind = "rebalance";
  CHECK_THROWS_AS((void)sq::cmd_shift_sweep(c), sq::ConfigError);
}

TEST_CASE("smoothing sweep reports both objective values per setting") {
  sq::ExperimentConfig c = tiny_config();
  c.mus = {1e-2, 1.0, 1e8};
  c.optimizer.max_iter = 150;
  c.seeds = {1};
  const json r = sq::cmd_mu_sweep(c);
  const auto& block = r["seeds"][0];
  CHECK(block["erm_reference"].contains("mean_loss"));
  CHECK(block["erm_reference"].contains("exact_superquantile"));
  REQUIRE(block["entries"].size() == 3);
  for (const auto& e : block["entries"]) {
    // the smoothed surrogate never exceeds the exact tail objective
    CHECK(e["smoothed_value"].get<double>() <=
          e["exact_value"].get<double>() + 1e-9);
  }
  REQUIRE(r["aggregate"]["by_mu"].size() == 3);
  CHECK(r["aggregate"]["by_mu"][0]["mu"] == 1e-2);
  CHECK(r["aggregate"]["by_mu"][0].contains("line_search_failures"));
}

TEST_CASE("report writer emits the histogram companion on request") {
  sq::ExperimentConfig c = tiny_config();
  c.seeds = {1};
  const json r = sq::cmd_train(c);
  const std::string base = "/tmp/sqlearn_report_test";
  sq::write_report(r, base + ".json", true);
  std::ifstream jin(base + ".json");
  CHECK(jin.good());
  std::ifstream cin_(base + "_hist.csv");
  REQUIRE(cin_.good());
  std::string header;
  std::getline(cin_, header);
  CHECK(header == "name,bin_lo,bin_hi,count");
}

TEST_CASE("schema check rejects mangled reports") {
  sq::ExperimentConfig c = tiny_config();
  c.seeds = {1};
  json r = sq::cmd_train(c);
  CHECK_NOTHROW(sq::check_report(r));
  json broken = r;
  broken.erase("aggregate");
  CHECK_THROWS_AS(sq::check_report(broken), std::runtime_error);
  broken = r;
  broken["seeds"][0].erase("metrics");
  CHECK_THROWS_AS(sq::check_report(broken), std::runtime_error);
  broken = r;
  broken["seeds"][0]["histogram"]["edges"] = json::array();
  CHECK_THROWS_AS(sq::check_report(broken), std::runtime_error);
}

TEST_CASE("thread cap env var controls the worker count") {
  // worker_cap only reads the environment; the parallel path is covered by
  // the determinism cases above
  CHECK(sq::worker_cap() >= 1);
}
