#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#ifndef SQLEARN_BIN
#error "SQLEARN_BIN must point at the cli binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "sqlearn_cli_tests";
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd =
      std::string(SQLEARN_BIN) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

json load_report(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  json j;
  in >> j;
  return j;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help") == 0);
  CHECK(run("train --help") == 0);
  CHECK(run("") == 2);                  // a subcommand is required
  CHECK(run("conjure") == 2);           // unknown subcommand
  CHECK(run("train --no-such-flag") == 2);
}

TEST_CASE("generate then train on the produced csv") {
  const fs::path dir = scratch_dir();
  const fs::path csv = dir / "gen.csv";
  const fs::path schema = dir / "gen.schema.json";
  const fs::path report = dir / "gen_report.json";
  CHECK(run("generate --kind synth_classification --n 150 --d 3 --seed 9 "
            "--output " + csv.string() + " --schema-out " + schema.string()) ==
        0);
  REQUIRE(fs::exists(csv));
  REQUIRE(fs::exists(schema));

  write_file(dir / "train.json",
             std::string("{\"dataset\":{\"type\":\"csv\",\"path\":\"") +
                 csv.string() + "\",\"schema\":\"" + schema.string() +
                 "\"},\"seeds\":[0],\"optimizer\":{\"max_iter\":80}," +
                 "\"output\":\"" + report.string() + "\"}");
  CHECK(run("train --config " + (dir / "train.json").string()) == 0);
  const json r = load_report(report);
  CHECK(r["command"] == "train");
  CHECK(r["seeds"].size() == 1);
  CHECK(r["seeds"][0]["metrics"].contains("accuracy"));
}

TEST_CASE("generated data is identical for identical seeds") {
  const fs::path dir = scratch_dir();
  const auto gen = [&](const std::string& name) {
    REQUIRE(run("generate --kind synth_regression --n 40 --d 2 --seed 3 "
                "--output " + (dir / name).string()) == 0);
    std::ifstream in(dir / name, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>()};
  };
  const std::string a = gen("a.csv");
  const std::string b = gen("b.csv");
  CHECK(!a.empty());
  CHECK(a == b);
}

TEST_CASE("flag overrides reach the run") {
  const fs::path dir = scratch_dir();
  const fs::path report = dir / "override.json";
  CHECK(run("train --seed 11 --p 0.5 --algorithm gradient --max-iter 40 "
            "--lr 0.05 --output " + report.string()) == 0);
  const json r = load_report(report);
  CHECK(r["config"]["objective"]["p"] == 0.5);
  CHECK(r["config"]["algorithm"] == "gradient");
  CHECK(r["config"]["optimizer"]["max_iter"] == 40);
  REQUIRE(r["seeds"].size() == 1);
  CHECK(r["seeds"][0]["seed"] == 11);
}

TEST_CASE("config errors exit with code two") {
  CHECK(run("train --p 1.5") == 2);
  CHECK(run("train --algorithm quantum") == 2);
  CHECK(run("cv --config /nonexistent/config.json") == 2);
  const fs::path dir = scratch_dir();
  write_file(dir / "broken.json", "{\"loss\":");
  CHECK(run("train --config " + (dir / "broken.json").string()) == 2);
  write_file(dir / "unknown.json", "{\"objectif\":{}}");
  CHECK(run("train --config " + (dir / "unknown.json").string()) == 2);
}

TEST_CASE("data errors exit with code three") {
  const fs::path dir = scratch_dir();
  write_file(dir / "missing_data.json",
             "{\"dataset\":{\"type\":\"csv\",\"path\":\"/nonexistent/x.csv\","
             "\"schema\":\"/nonexistent/x.schema.json\"},\"seeds\":[0]}");
  CHECK(run("train --config " + (dir / "missing_data.json").string()) == 3);
}

TEST_CASE("rerunning a command reproduces every metric bit for bit") {
  const fs::path dir = scratch_dir();
  const fs::path r1 = dir / "rep1.json";
  const fs::path r2 = dir / "rep2.json";
  const std::string flags =
      "train --seed 5 --max-iter 60 --p 0.8 --mu 0.2 ";
  REQUIRE(run(flags + "--output " + r1.string()) == 0);
  REQUIRE(run(flags + "--output " + r2.string()) == 0);
  json a = load_report(r1);
  json b = load_report(r2);
  a.erase("generated_at_unix_ms");
  b.erase("generated_at_unix_ms");
  a["config"].erase("output");
  b["config"].erase("output");
  CHECK(a == b);
}

TEST_CASE("histogram csv lands next to the report") {
  const fs::path dir = scratch_dir();
  const fs::path report = dir / "hist_run.json";
  CHECK(run("train --seed 2 --max-iter 30 --histogram-csv --output " +
            report.string()) == 0);
  CHECK(fs::exists(dir / "hist_run_hist.csv"));
}
