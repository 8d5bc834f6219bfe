// One PASS/FAIL line per acceptance criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "thzleaf/eval.hpp"
#include "thzleaf/parallel.hpp"
#include "thzleaf/thz_sim.hpp"

using namespace thzleaf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

json g_results = json::object();

// ---------------------------------------------------------------------------

Outcome physics_oracle() {
  const auto t0 = Clock::now();
  using sim::cplx;
  const cplx n(2.1, 0.03);
  const double d = 0.2;
  const sim::LayerStack s{{sim::Layer{d, sim::ConstantIndex{n.real(), n.imag()}}}};
  double err = 0.0;
  for (int k = 1; k <= 512; ++k) {
    const double f = 3.0 * k / 512.0;
    const double k0 = 2.0 * std::numbers::pi * f / sim::kSpeedOfLight;
    const cplx r = (1.0 - n) / (1.0 + n);
    const cplx ph = std::exp(cplx(0.0, 1.0) * k0 * n * d);
    const cplx ref = (4.0 * n / ((1.0 + n) * (1.0 + n))) * ph / (1.0 - r * r * ph * ph);
    err = std::max(err, std::abs(sim::stack_transmission(s, f) - ref));
  }
  const bool unity = sim::stack_transmission(sim::LayerStack{}, 1.0) == cplx(1.0, 0.0);
  const double secs = seconds_since(t0);
  g_results["etalon_max_error"] = err;
  return {err < 1e-10 && unity && secs < 1.0,
          "max |t_tmm - t_etalon| = " + fmt(err) + ", empty stack unity " + (unity ? "yes" : "no") + ", " +
              fmt(secs, 3) + " s"};
}

Outcome water_model() {
  const double alpha = sim::power_absorption_per_cm(sim::DoubleDebyeWater{}, 1.0);
  g_results["water_alpha_1thz_per_cm"] = alpha;
  return {alpha >= 200.0 && alpha <= 250.0, "alpha(1 THz) = " + fmt(alpha, 5) + " cm^-1"};
}

Outcome polynomial_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.below(21));
    const double lo = rng.uniform(0.0, 34.0), hi = lo + rng.uniform(2.0, 4.0);
    std::vector<double> t, y;
    for (double x = lo; x <= hi; x += 0.05) {
      t.push_back(x);
      y.push_back(rng.uniform(-0.5, 0.5) + std::sin(2.0 * x) * std::exp(-0.1 * x));
    }
    const auto c = features::fit_polynomial(t, y, n, lo, hi);
    worst = std::max(worst, oracle::relative_error(c, oracle::poly_fit(t, y, n, lo, hi)));
  }
  const double secs = seconds_since(t0);
  g_results["poly_fit_worst_relative_error"] = worst;
  return {worst < 1e-8 && secs < 10.0, "worst relative error " + fmt(worst) + " over 1000 windows (degree 0-20), " +
                                           fmt(secs, 3) + " s"};
}

Outcome tree_oracle() {
  const auto t0 = Clock::now();
  Rng rng(77);
  int matched = 0, min_leaf = 1 << 30;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + rng.below(191), p = 1 + rng.below(3);
    Matrix X(n, p);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform(-1.0, 1.0);
      y[i] = (X(i, 0) > rng.uniform(-0.2, 0.2) ? 1.5 : -0.5) + X(i, p - 1) * X(i, p - 1) + 0.4 * rng.normal();
    }
    const auto crit = trial % 2 ? dtree::Criterion::L1 : dtree::Criterion::L2;
    dtree::TreeParams params;
    params.criterion = crit;
    Rng fr(trial);
    const auto tree = dtree::fit_tree(X, y, params, fr);
    const auto best = oracle::brute_force_root(X, y, params.min_samples_leaf, crit);
    const auto& root = tree.nodes[0];
    if ((best.feature < 0 && root.is_leaf()) || (root.feature == best.feature && root.threshold == best.threshold))
      ++matched;
    min_leaf = std::min(min_leaf, tree.min_leaf_count());
  }
  const double secs = seconds_since(t0);
  return {matched == 50 && min_leaf >= 5 && secs < 30.0, std::to_string(matched) +
                                                            "/50 root splits match, smallest leaf " +
                                                            std::to_string(min_leaf) + ", " + fmt(secs, 3) + " s"};
}

Outcome cnn_structure() {
  const auto t0 = Clock::now();
  const cnn::Architecture arch;
  const std::vector<std::size_t> expected{760, 380, 190, 95, 47, 23, 11};
  const bool chain = arch.shape_chain() == expected;
  const auto counts = cnn::count_parameters(arch);
  const auto gc = oracle::cnn_gradient_check();
  const double secs = seconds_since(t0);
  g_results["cnn_parameters"] = {{"total", counts.total},
                                 {"feature_part", counts.feature_part},
                                 {"regression_part", counts.regression_part}};
  g_results["cnn_gradcheck_relative_error"] = gc.relative_error;
  return {chain && counts.regression_part == 46241 && gc.relative_error < 1e-4 && secs < 60.0,
          std::string("shape chain ") + (chain ? "ok" : "wrong") + ", head parameters " +
              std::to_string(counts.regression_part) + ", gradient check " + fmt(gc.relative_error) + ", " +
              fmt(secs, 3) + " s"};
}

Outcome metric_identities() {
  const std::vector<double> g{0.0, 1.0, 4.0};
  const std::vector<double> gb2{1.0, 3.0}, gp2{2.0, 3.0};
  const std::vector<double> gb3{0.0, 1.0, 2.0}, gp3{0.1, 1.5, 2.0};
  const double e0 = std::abs(eval::median_pct_diff(g, g));
  const double e1 = std::abs(eval::median_pct_diff(gp2, gb2) - 0.5 / 1.1);
  const double e2 = std::abs(eval::median_pct_diff(gp3, gb3) - 0.5 / 1.1);
  const double worst = std::max({e0, e1, e2});
  return {worst <= 1e-12, "largest deviation " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// Desk-scale runs, shared by the end-to-end, scenario and inference criteria.

struct Desk {
  Dataset top, bottom;
  eval::PipelineConfigs configs;
  eval::ScenarioOptions options;
  eval::DtModel dt_model;
  eval::ScenarioReport random;
  double dt_seconds = 0.0, cnn_seconds = 0.0, synth_seconds = 0.0;
  bool ready = false;
  std::string error;
};

Desk& desk() {
  static Desk d;
  if (d.ready || !d.error.empty()) return d;
  try {
    auto t0 = Clock::now();
    sim::SimConfig top;
    top.n_series = 20;
    top.acquisitions_per_series = 200;
    top.seed = 1;
    d.top = sim::generate_dataset(top);
    sim::SimConfig bottom = top;
    bottom.n_series = 5;
    bottom.orientation = Orientation::BottomSide;
    bottom.first_series_id = 100;
    bottom.seed = 2;
    d.bottom = sim::generate_dataset(bottom);
    d.synth_seconds = seconds_since(t0);

    d.configs.cnn.train.epochs = 60;
    d.options.test_fraction = 0.15;
    d.options.split_seed = 7;
    const auto [train, test] = eval::scenario_split(eval::Scenario::Random, d.top, nullptr, d.options);
    d.configs.cnn.arch.input_length = d.top.n_t();

    t0 = Clock::now();
    auto dt_rep = eval::run_pipeline_dt(train, test, d.configs.dt, d.configs.eval, &d.dt_model);
    d.dt_seconds = seconds_since(t0);
    t0 = Clock::now();
    auto cnn_rep = eval::run_pipeline_cnn(train, test, d.configs.cnn, d.configs.eval);
    d.cnn_seconds = seconds_since(t0);

    d.random = dt_rep;
    d.random.scenario = "random";
    d.random.models.push_back(cnn_rep.models.front());
    d.ready = true;
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  return d;
}

json model_summary(const eval::ModelResult& m) {
  return {{"mae_mg", m.report.mae},
          {"median_pct_diff", m.report.median_pct_diff},
          {"low_g_mean_abs_delta", m.low_g_mean_abs_delta},
          {"high_g_mean_abs_delta", m.high_g_mean_abs_delta},
          {"inference_ms", m.timing.mean_ms}};
}

Outcome desk_end_to_end() {
  auto& d = desk();
  if (!d.ready) return {false, "desk run failed: " + d.error};
  const auto& dt = d.random.model("dt");
  const auto& cn = d.random.model("cnn");
  const double total = d.synth_seconds + d.dt_seconds + d.cnn_seconds;
  g_results["desk"] = {{"records", d.top.size()},
                       {"series", d.top.series_ids().size()},
                       {"n_train", d.random.n_train},
                       {"n_test", d.random.n_test},
                       {"dt", model_summary(dt)},
                       {"cnn", model_summary(cn)},
                       {"dt_orders", d.dt_model.windows.orders},
                       {"dt_selected_features", d.dt_model.ensemble.feature_names},
                       {"dt_max_depth", d.dt_model.ensemble.params.max_depth},
                       {"seconds", {{"synth", d.synth_seconds}, {"dt", d.dt_seconds}, {"cnn", d.cnn_seconds}}}};
  const bool ok = dt.report.median_pct_diff < 0.10 && cn.report.median_pct_diff < 0.15 && dt.report.mae < 1.5 &&
                  cn.report.mae < 1.5 && total < 1800.0;
  return {ok, std::to_string(d.top.size()) + " traces / " + std::to_string(d.top.series_ids().size()) +
                  " series; dt median " + fmt(100 * dt.report.median_pct_diff, 3) + "% MAE " + fmt(dt.report.mae, 3) +
                  " mg; cnn median " + fmt(100 * cn.report.median_pct_diff, 3) + "% MAE " +
                  fmt(cn.report.mae, 3) + " mg; " + fmt(total / 60.0, 3) + " min"};
}

Outcome scenario_ordering() {
  auto& d = desk();
  if (!d.ready) return {false, "desk run failed: " + d.error};
  // Scenarios reuse the feature configuration selected on the random split.
  auto configs = d.configs;
  auto& dt = configs.dt;
  dt.windows = d.dt_model.windows;
  dt.search_orders = false;
  dt.grid_search = false;
  dt.rfe = false;
  dt.fixed_features = d.dt_model.ensemble.feature_names;
  dt.tree = d.dt_model.ensemble.params;
  const auto t0 = Clock::now();
  const auto r1 = eval::run_scenario(eval::Scenario::CaseI, d.top, &d.bottom, configs, d.options);
  const auto r2 = eval::run_scenario(eval::Scenario::CaseII, d.top, &d.bottom, configs, d.options);
  const auto r3 = eval::run_scenario(eval::Scenario::CaseIII, d.top, &d.bottom, configs, d.options);
  const double secs = seconds_since(t0);
  json js;
  bool ok = true;
  std::ostringstream detail;
  for (const std::string m : {"dt", "cnn"}) {
    const double rnd = d.random.model(m).report.median_pct_diff;
    const double c1 = r1.model(m).report.median_pct_diff;
    const double c2 = r2.model(m).report.median_pct_diff;
    const double c3 = r3.model(m).report.median_pct_diff;
    const double lo = r3.model(m).low_g_mean_abs_delta, hi = r3.model(m).high_g_mean_abs_delta;
    const bool a = c1 >= rnd, b = c3 > c2, c = lo < hi;
    ok = ok && a && b && c;
    detail << m << ": I " << fmt(100 * c1, 3) << "% vs random " << fmt(100 * rnd, 3) << "% " << (a ? "ok" : "X")
           << ", III " << fmt(100 * c3, 3) << "% vs II " << fmt(100 * c2, 3) << "% " << (b ? "ok" : "X")
           << ", III |d| low " << fmt(lo, 3) << " vs high " << fmt(hi, 3) << " mg " << (c ? "ok" : "X") << "; ";
    js[m] = {{"random", model_summary(d.random.model(m))},
             {"I", model_summary(r1.model(m))},
             {"II", model_summary(r2.model(m))},
             {"III", model_summary(r3.model(m))}};
  }
  js["held_out_series_case_I"] = r1.held_out_series;
  js["bottom_records"] = d.bottom.size();
  js["seconds"] = secs;
  g_results["scenarios"] = js;
  detail << fmt(secs / 60.0, 3) << " min";
  return {ok, detail.str()};
}

Outcome inference_cost() {
  auto& d = desk();
  if (!d.ready) return {false, "desk run failed: " + d.error};
  const double dt = d.random.model("dt").timing.mean_ms, cn = d.random.model("cnn").timing.mean_ms;
  return {dt < 50.0 && cn < 50.0, "dt " + fmt(dt, 3) + " ms, cnn " + fmt(cn, 3) + " ms per sample (mean of " +
                                      std::to_string(d.random.model("dt").timing.runs) + " runs)"};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json strip_timing(json j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [k, v] : j.items()) v = strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_timing(v);
  }
  return j;
}

int sh(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome reproducibility(const fs::path& work) {
  const std::string cli = THZLEAF_CLI;
  const fs::path a = work / "repro_a", b = work / "repro_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::string sets =
      " --set sim.n_series=3 --set sim.acquisitions_per_series=40 --set dtree.n_trees=20 --set dtree.search_trees=5"
      " --set features.order_max=6 --set dtree.grid_max_depth=[6,-1] --set cnn.epochs=2 --set cnn.batch_size=32"
      " --set eval.timing_runs=3";
  // Run B repeats every command of run A from the config A stored next to its outputs.
  auto chain = [&](const fs::path& dir, bool from_stored) -> bool {
    auto cfg = [&](const std::string& step) {
      return from_stored ? " --threads 1 --config " + (a / step / "config.yaml").string() : sets;
    };
    const std::string data = (dir / "synth" / "dataset").string();
    return sh(cli + " synth --out " + (dir / "synth").string() + cfg("synth")) == 0 &&
           sh(cli + " train dt --data " + data + " --out " + (dir / "dt").string() + cfg("dt")) == 0 &&
           sh(cli + " train cnn --data " + data + " --out " + (dir / "cnn").string() + cfg("cnn")) == 0 &&
           sh(cli + " eval --model " + (dir / "dt").string() + " --data " + data + " --out " +
              (dir / "eval_dt").string() + cfg("eval_dt")) == 0 &&
           sh(cli + " eval --model " + (dir / "cnn").string() + " --data " + data + " --out " +
              (dir / "eval_cnn").string() + cfg("eval_cnn")) == 0;
  };
  if (!chain(a, false)) return {false, "first CLI run failed"};
  if (!chain(b, true)) return {false, "rerun from stored config failed"};
  const std::vector<std::string> files{"synth/dataset/traces.f32", "synth/dataset/manifest.json", "dt/model.json",
                                       "cnn/model.json",           "cnn/weights.f32",              "cnn/history.csv",
                                       "eval_dt/report.csv",       "eval_cnn/report.csv"};
  std::vector<std::string> diff;
  for (const auto& f : files)
    if (slurp(a / f).empty() || slurp(a / f) != slurp(b / f)) diff.push_back(f);
  for (const std::string f : {"eval_dt/report.json", "eval_cnn/report.json"})
    if (strip_timing(json::parse(slurp(a / f))) != strip_timing(json::parse(slurp(b / f)))) diff.push_back(f);
  std::string list;
  for (const auto& f : diff) list += " " + f;
  return {diff.empty(), diff.empty() ? std::to_string(files.size() + 2) + " artifacts bit-identical after rerun with --threads 1"
                                     : "differs:" + list};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "thzleaf_acceptance").string();
  std::vector<std::string> only;
  std::string results_file;
  app.add_option("--workdir", workdir, "scratch directory for CLI runs");
  app.add_option("--only", only, "run only the named criteria");
  app.add_option("--results", results_file, "write measured values as JSON");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  if (results_file.empty()) results_file = (fs::path(workdir) / "acceptance_results.json").string();

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"physics_oracle", physics_oracle},
      {"water_model", water_model},
      {"polynomial_fit_oracle", polynomial_oracle},
      {"tree_oracle", tree_oracle},
      {"cnn_structure", cnn_structure},
      {"metric_identities", metric_identities},
      {"desk_end_to_end", desk_end_to_end},
      {"scenario_ordering", scenario_ordering},
      {"reproducibility", [&] { return reproducibility(workdir); }},
      {"inference_cost", inference_cost},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::ofstream(results_file) << g_results.dump(1) << "\n";
  return failed == 0 ? 0 : 1;
}
