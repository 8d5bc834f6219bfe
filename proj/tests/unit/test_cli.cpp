#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "thzleaf/cli.hpp"
#include "thzleaf/core_data.hpp"

using namespace thzleaf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kTiny{"--set", "sim.n_series=2", "--set", "sim.acquisitions_per_series=12"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(cli::run(std::vector<std::string>{}) == cli::kUsage);
  CHECK(cli::run({"frobnicate"}) == cli::kUsage);
  CHECK(cli::run({"train", "forest", "--data", "x", "--out", "y"}) == cli::kUsage);
  CHECK(cli::run({"synth"}) == cli::kUsage);
  CHECK(cli::run({"--help"}) == cli::kOk);
}

TEST_CASE("config and I/O errors have their own codes") {
  testing::TempDir tmp("cli_err");
  CHECK(cli::run({"synth", "--out", (tmp.path / "a").string(), "--set", "sim.nope=1"}) == cli::kConfig);
  CHECK(cli::run({"synth", "--out", (tmp.path / "a").string(), "--config", (tmp.path / "none.yaml").string()}) ==
        cli::kIo);
  CHECK(cli::run({"eval", "--model", (tmp.path / "m").string(), "--data", (tmp.path / "d").string(), "--out",
                  (tmp.path / "o").string()}) == cli::kIo);
}

TEST_CASE("zero series synthesises an empty dataset and succeeds") {
  testing::TempDir tmp("cli_empty");
  CHECK(cli::run({"synth", "--out", tmp.path.string(), "--set", "sim.n_series=0"}) == cli::kOk);
  CHECK(read_dataset(tmp.path / "dataset").empty());
  CHECK(fs::exists(tmp.path / "config.yaml"));
}

TEST_CASE("synth, train, eval, scenario and inspect chain together") {
  testing::TempDir tmp("cli_chain");
  const auto run_dir = tmp.path / "synth";
  REQUIRE(cli::run(with({"synth", "--out", run_dir.string(), "--threads", "1"}, kTiny)) == cli::kOk);
  const auto data = (run_dir / "dataset").string();
  const auto summary = nlohmann::json::parse(slurp(run_dir / "summary.json"));
  CHECK(summary.at("records").get<std::size_t>() == read_dataset(data).size());

  // rerun from the stored config reproduces the dataset bit for bit
  const auto rerun = tmp.path / "synth2";
  REQUIRE(cli::run({"synth", "--config", (run_dir / "config.yaml").string(), "--out", rerun.string(), "--threads",
                    "1"}) == cli::kOk);
  CHECK(slurp(run_dir / "dataset" / "traces.f32") == slurp(rerun / "dataset" / "traces.f32"));
  CHECK(slurp(run_dir / "dataset" / "manifest.json") == slurp(rerun / "dataset" / "manifest.json"));

  const std::vector<std::string> fast_dt{"--set", "features.search_orders=false", "--set", "dtree.grid_search=false",
                                         "--set", "features.rfe=false", "--set", "dtree.n_trees=3"};
  const auto dt_dir = tmp.path / "dt";
  REQUIRE(cli::run(with({"train", "dt", "--data", data, "--out", dt_dir.string()}, fast_dt)) == cli::kOk);
  CHECK(fs::exists(dt_dir / "model.json"));
  CHECK(fs::exists(dt_dir / "config.yaml"));

  const std::vector<std::string> fast_cnn{"--set", "cnn.epochs=1", "--set", "cnn.batch_size=8"};
  const auto cnn_dir = tmp.path / "cnn";
  REQUIRE(cli::run(with({"train", "cnn", "--data", data, "--out", cnn_dir.string()}, fast_cnn)) == cli::kOk);
  CHECK(fs::exists(cnn_dir / "weights.f32"));
  const auto hist = slurp(cnn_dir / "history.csv");
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 2);

  const auto ev = tmp.path / "eval";
  REQUIRE(cli::run({"eval", "--model", dt_dir.string(), "--data", data, "--out", ev.string(), "--set",
                    "eval.timing_runs=2"}) == cli::kOk);
  const auto rep = nlohmann::json::parse(slurp(ev / "report.json"));
  CHECK(rep.at("models").at(0).at("train_test_leak").get<bool>());
  CHECK(fs::exists(ev / "report.csv"));

  CHECK(cli::run({"scenario", "III", "--data", data, "--out", (tmp.path / "s3").string()}) == cli::kPipeline);
  CHECK(cli::run({"scenario", "V", "--data", data, "--out", (tmp.path / "s5").string()}) == cli::kUsage);
  REQUIRE(cli::run(with(with({"scenario", "I", "--data", data, "--out", (tmp.path / "s1").string(), "--set",
                              "eval.n_held_out=1", "--set", "eval.timing_runs=1"},
                             fast_dt),
                        fast_cnn)) == cli::kOk);
  CHECK(fs::exists(tmp.path / "s1" / "report.csv"));

  const auto insp = tmp.path / "inspect";
  REQUIRE(cli::run({"inspect", "--model", cnn_dir.string(), "--data", data, "--out", insp.string(), "--svg"}) ==
          cli::kOk);
  CHECK(fs::exists(insp / "activations.csv"));
  CHECK(fs::exists(insp / "xi.csv"));
  CHECK(fs::exists(insp / "sigma.svg"));
  CHECK(cli::run({"inspect", "--model", dt_dir.string(), "--data", data, "--out", (tmp.path / "i2").string()}) ==
        cli::kUsage);
}
