#include "thzleaf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "thzleaf/config.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/hash.hpp"
#include "thzleaf/parallel.hpp"

namespace thzleaf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int threads = -1;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--config", c.config, "YAML run configuration");
  app->add_option("--set", c.sets, "override as section.key=value (repeatable)");
  app->add_option("--threads", c.threads, "worker cap; 1 forces the reproducible single-thread mode")
      ->check(CLI::NonNegativeNumber);
  auto* o = app->add_option("--out", c.out, "output run directory");
  if (needs_out) o->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_config(c.config, c.sets);
  if (c.threads >= 0) cfg.threads = static_cast<unsigned>(c.threads);
  set_thread_count(cfg.threads);
  return cfg;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("write failed for " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Resolved config plus tool version, command and input hashes.
void write_run_info(const fs::path& out, const RunConfig& cfg, const std::string& command, const json& inputs) {
  make_dir(out);
  cfg.save(out / "config.yaml");
  json p;
  p["tool"] = "thzleaf";
  p["version"] = kVersion;
  p["command"] = command;
  p["inputs"] = inputs;
  write_text(out / "provenance.json", p.dump(1) + "\n");
}

json g_histogram(const Dataset& d, double bin_mg = 1.0) {
  double g_max = 0.0;
  for (const auto& r : d.records) g_max = std::max(g_max, r.g_b);
  const auto bins = static_cast<std::size_t>(std::floor(g_max / bin_mg)) + 1;
  std::vector<std::size_t> counts(bins, 0);
  for (const auto& r : d.records) ++counts[std::min(bins - 1, static_cast<std::size_t>(r.g_b / bin_mg))];
  return {{"bin_mg", bin_mg}, {"counts", counts}};
}

void print_summary(const eval::ScenarioReport& rep) {
  std::cout << "scenario " << rep.scenario << ": n_train=" << rep.n_train << " n_test=" << rep.n_test;
  if (!rep.held_out_series.empty()) {
    std::cout << " held_out=";
    for (std::size_t i = 0; i < rep.held_out_series.size(); ++i) std::cout << (i ? "," : "") << rep.held_out_series[i];
  }
  std::cout << "\n";
  std::cout << std::left << std::setw(6) << "model" << std::right << std::setw(10) << "MAE[mg]" << std::setw(14)
            << "median_pct[%]" << std::setw(14) << "|d| g<thr" << std::setw(14) << "|d| g>=thr" << std::setw(12)
            << "ms/sample" << "\n";
  for (const auto& m : rep.models) {
    std::cout << std::left << std::setw(6) << m.model << std::right << std::fixed << std::setprecision(3)
              << std::setw(10) << m.report.mae << std::setw(14) << 100.0 * m.report.median_pct_diff << std::setw(14)
              << m.low_g_mean_abs_delta << std::setw(14) << m.high_g_mean_abs_delta << std::setw(12)
              << m.timing.mean_ms << (m.train_test_leak ? "  (test set equals training set)" : "") << "\n";
  }
  std::cout.unsetf(std::ios::floatfield);
}

void write_report(const fs::path& out, const eval::ScenarioReport& rep) {
  write_text(out / "report.json", rep.to_json() + "\n");
  write_text(out / "report.csv", rep.to_csv());
  print_summary(rep);
}

std::string model_format(const fs::path& model_dir) {
  const fs::path file = model_dir / "model.json";
  try {
    return json::parse(read_text(file)).at("format").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

void write_svg(const fs::path& file, const std::string& title,
               const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& [name, pts] : series)
    for (const auto& [x, y] : pts) {
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  const double W = 800, H = 400, m = 40;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<text x=\"" << m << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  std::size_t k = 0;
  for (const auto& [name, pts] : series) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[k % 6] << "\" points=\"";
    for (const auto& [x, y] : pts)
      os << m + (x - x0) / (x1 - x0) * (W - 2 * m) << ',' << H - m - (y - y0) / (y1 - y0) * (H - 2 * m) << ' ';
    os << "\"><title>" << name << "</title></polyline>\n";
    ++k;
  }
  os << "</svg>\n";
  write_text(file, os.str());
}

// ---------------------------------------------------------------------------

void cmd_synth(const Common& c, const std::string& command) {
  const RunConfig cfg = resolve(c);
  const fs::path out = c.out;
  write_run_info(out, cfg, command, json::object());
  const Dataset d = sim::generate_dataset(cfg.sim);
  if (d.empty()) std::cerr << "warning: configuration produced an empty dataset (n_series = 0)\n";
  write_dataset(d, out / "dataset");
  json s;
  s["records"] = d.size();
  s["series"] = d.series_ids().size();
  s["orientation"] = to_string(cfg.sim.orientation);
  s["content_hash"] = hex64(d.content_hash());
  s["g_histogram"] = g_histogram(d);
  write_text(out / "summary.json", s.dump(1) + "\n");
  std::cout << "synthesized " << d.size() << " records in " << d.series_ids().size() << " series -> "
            << (out / "dataset").string() << "\n";
}

void cmd_train(const Common& c, const std::string& model, const std::string& data, const std::string& command) {
  if (model != "dt" && model != "cnn") throw UsageError("unknown model '" + model + "' (expected dt or cnn)");
  RunConfig cfg = resolve(c);
  const Dataset train = read_dataset(data);
  const fs::path out = c.out;
  write_run_info(out, cfg, command, {{"data", hex64(train.content_hash())}});
  json metrics;
  metrics["model"] = model;
  metrics["n_train"] = train.size();
  if (model == "dt") {
    eval::DtTrainLog log;
    const auto m = eval::train_dt(train, cfg.pipeline.dt, &log);
    m.save(out / "model.json");
    if (cfg.pipeline.dt.search_orders) write_text(out / "orders.csv", log.orders.to_csv());
    if (cfg.pipeline.dt.grid_search) write_text(out / "grid.csv", log.grid.to_csv());
    if (!log.rfe.steps.empty()) {
      std::ostringstream os;
      os.precision(17);
      os << "step,removed,n_features,val_loss\n";
      for (std::size_t i = 0; i < log.rfe.steps.size(); ++i) {
        const auto& s = log.rfe.steps[i];
        os << i << ',' << (s.removed >= 0 ? m.feature_names[static_cast<std::size_t>(s.removed)] : "") << ','
           << std::count(s.mask.begin(), s.mask.end(), 1) << ',' << s.val_loss << '\n';
      }
      write_text(out / "rfe.csv", os.str());
    }
    metrics["orders"] = m.windows.orders;
    metrics["selected_features"] = m.ensemble.feature_names;
    if (cfg.pipeline.dt.grid_search) {
      metrics["max_depth"] = log.grid.best.max_depth;
      double best = INFINITY;
      for (const auto& r : log.grid.table) best = std::min(best, r.cv_loss);
      metrics["cv_mse"] = best;
    }
    if (cfg.pipeline.dt.grid_search)
      std::cout << log.grid.to_csv();
  } else {
    auto pc = cfg.pipeline.cnn;
    pc.arch.input_length = train.n_t();
    auto r = eval::train_cnn(train, pc);
    auto& m = eval::chosen_model(r, pc);
    m.save(out / "model.json", out / "weights.f32");
    write_text(out / "history.csv", cnn::history_csv(r.history));
    metrics["epochs"] = r.history.size();
    metrics["best_epoch"] = r.best_epoch;
    if (!r.history.empty()) {
      metrics["final_val_loss"] = r.history.back().val_loss;
      metrics["best_val_loss"] = r.history[static_cast<std::size_t>(std::max(0, r.best_epoch - 1))].val_loss;
    }
  }
  write_text(out / "metrics.json", metrics.dump(1) + "\n");
  std::cout << "trained " << model << " on " << train.size() << " records -> " << (out / "model.json").string()
            << "\n";
}

void cmd_eval(const Common& c, const std::string& model_dir, const std::string& data, const std::string& command) {
  const RunConfig cfg = resolve(c);
  const Dataset test = read_dataset(data);
  const fs::path out = c.out;
  const std::string format = model_format(model_dir);
  eval::ScenarioReport rep;
  rep.scenario = "eval";
  rep.n_test = test.size();
  json inputs{{"data", hex64(test.content_hash())}};
  if (format == "thzleaf-dt-model") {
    const auto m = eval::DtModel::load(fs::path(model_dir) / "model.json");
    inputs["model_train_data"] = hex64(m.train_data_hash);
    write_run_info(out, cfg, command, inputs);
    rep.models.push_back(eval::evaluate_dt(m, test, cfg.pipeline.eval));
  } else if (format == "thzleaf-cnn") {
    auto m = cnn::CnnModel::load(fs::path(model_dir) / "model.json", fs::path(model_dir) / "weights.f32");
    inputs["model_train_data"] = hex64(m.data_hash);
    write_run_info(out, cfg, command, inputs);
    rep.models.push_back(eval::evaluate_cnn(m, test, cfg.pipeline.eval));
  } else {
    throw FormatError("unrecognised model format '" + format + "'");
  }
  write_report(out, rep);
}

void cmd_scenario(const Common& c, const std::string& id, const std::string& data, const std::string& bottom_path,
                  const std::string& command) {
  eval::Scenario sc;
  try {
    sc = eval::scenario_from_string(id);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  RunConfig cfg = resolve(c);
  const Dataset top = read_dataset(data);
  std::optional<Dataset> bottom;
  if (!bottom_path.empty()) bottom = read_dataset(bottom_path);
  json inputs{{"data", hex64(top.content_hash())}};
  if (bottom) inputs["bottom"] = hex64(bottom->content_hash());
  const fs::path out = c.out;
  write_run_info(out, cfg, command, inputs);
  cfg.pipeline.cnn.arch.input_length = top.n_t();
  const auto rep = eval::run_scenario(sc, top, bottom ? &*bottom : nullptr, cfg.pipeline, cfg.scenario);
  write_report(out, rep);
}

void cmd_inspect(const Common& c, const std::string& model_dir, const std::string& data, std::vector<std::size_t> idx,
                 bool svg, const std::string& command) {
  const RunConfig cfg = resolve(c);
  const Dataset d = read_dataset(data);
  if (d.empty()) throw PipelineError("inspect", "dataset is empty");
  if (idx.empty()) {
    // Lowest and highest g, mirroring a dry/wet pair.
    std::size_t lo = 0, hi = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.records[i].g_b < d.records[lo].g_b) lo = i;
      if (d.records[i].g_b > d.records[hi].g_b) hi = i;
    }
    idx = {lo, hi};
  }
  for (auto i : idx)
    if (i >= d.size()) throw UsageError("record index " + std::to_string(i) + " out of range");
  const fs::path out = c.out;
  json inputs{{"data", hex64(d.content_hash())}};
  std::optional<cnn::CnnModel> model;
  if (!model_dir.empty()) {
    if (model_format(model_dir) != "thzleaf-cnn")
      throw UsageError("inspect needs a CNN model; tree models have no layer activations");
    model = cnn::CnnModel::load(fs::path(model_dir) / "model.json", fs::path(model_dir) / "weights.f32");
  }
  write_run_info(out, cfg, command, inputs);
  const double dt = d.records.front().trace.dt, t0 = d.records.front().trace.t0;

  if (model) {
    std::ostringstream os;
    os.precision(9);
    os << "record,g_b,block,position,activation\n";
    for (auto i : idx) {
      const auto& r = d.records[i];
      const auto act = model->layer_activations(r.trace, r.a);
      std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
      for (std::size_t b = 0; b < act.size(); ++b) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t p = 0; p < act[b].size(); ++p) {
          os << i << ',' << r.g_b << ',' << b + 1 << ',' << p << ',' << act[b][p] << '\n';
          pts.emplace_back(static_cast<double>(p) / static_cast<double>(act[b].size()), act[b][p]);
        }
        series.emplace_back("block " + std::to_string(b + 1), std::move(pts));
      }
      if (svg) write_svg(out / ("activations_" + std::to_string(i) + ".svg"), "record " + std::to_string(i), series);
    }
    write_text(out / "activations.csv", os.str());
  }

  // xi against the lowest-g record of the same series.
  std::ostringstream xs;
  xs.precision(9);
  xs << "t_ps";
  std::vector<std::vector<double>> xi;
  for (auto i : idx) {
    const auto& r = d.records[i];
    std::size_t ref = i;
    for (std::size_t j = 0; j < d.size(); ++j)
      if (d.records[j].series_id == r.series_id && d.records[j].g_b < d.records[ref].g_b) ref = j;
    xi.push_back(sim::xi_statistic(r.trace, d.records[ref].trace));
    xs << ",record_" << i;
  }
  xs << '\n';
  const auto sigma = sim::std_trace(d);
  std::ostringstream ss;
  ss.precision(9);
  ss << "t_ps,sigma\n";
  for (std::size_t k = 0; k < d.n_t(); ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    xs << t;
    for (const auto& x : xi) xs << ',' << x[k];
    xs << '\n';
    ss << t << ',' << sigma[k] << '\n';
  }
  write_text(out / "xi.csv", xs.str());
  write_text(out / "sigma.csv", ss.str());
  if (svg) {
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
    for (std::size_t s = 0; s < xi.size(); ++s) {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t k = 0; k < xi[s].size(); ++k) pts.emplace_back(t0 + static_cast<double>(k) * dt, xi[s][k]);
      series.emplace_back("record " + std::to_string(idx[s]), std::move(pts));
    }
    write_svg(out / "xi.svg", "xi(t)", series);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < sigma.size(); ++k) pts.emplace_back(t0 + static_cast<double>(k) * dt, sigma[k]);
    write_svg(out / "sigma.svg", "sigma(t)", {{"sigma", pts}});
  }
  std::cout << "inspected " << idx.size() << " records -> " << out.string() << "\n";
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"THz leaf-wetness toolkit: synthetic traces, tree and CNN regressors, evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common c;
  std::string model, data, bottom, model_dir, scenario_id;
  std::vector<std::size_t> indices;
  bool svg = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset into OUT/dataset");
  add_common(synth, c);

  auto* train = app.add_subcommand("train", "train a model (dt or cnn) on a dataset");
  train->add_option("model", model, "dt or cnn")->required();
  train->add_option("--data", data, "dataset directory")->required();
  add_common(train, c);

  auto* ev = app.add_subcommand("eval", "evaluate a trained model on a dataset");
  ev->add_option("--model", model_dir, "run directory holding model.json")->required();
  ev->add_option("--data", data, "test dataset directory")->required();
  add_common(ev, c);

  auto* sc = app.add_subcommand("scenario", "run a generalisation scenario (random, I, II, III)");
  sc->add_option("id", scenario_id, "random, I, II or III")->required();
  sc->add_option("--data", data, "top-side dataset directory")->required();
  sc->add_option("--bottom", bottom, "bottom-side dataset directory (II, III)");
  add_common(sc, c);

  auto* in = app.add_subcommand("inspect", "export layer activations, xi(t) and sigma(t)");
  in->add_option("--model", model_dir, "CNN run directory (optional)");
  in->add_option("--data", data, "dataset directory")->required();
  in->add_option("--index", indices, "record indices (default: lowest and highest g)");
  in->add_flag("--svg", svg, "also write SVG line plots");
  add_common(in, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = join_args(argc, argv);
  try {
    if (*synth) cmd_synth(c, command);
    else if (*train) cmd_train(c, model, data, command);
    else if (*ev) cmd_eval(c, model_dir, data, command);
    else if (*sc) cmd_scenario(c, scenario_id, data, bottom, command);
    else if (*in) cmd_inspect(c, model_dir, data, indices, svg, command);
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "pipeline error: " << e.what() << "\n";
    return kPipeline;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.emplace_back("thzleaf");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace thzleaf::cli
