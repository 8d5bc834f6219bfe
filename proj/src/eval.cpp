#include "thzleaf/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/hash.hpp"
#include "thzleaf/rng.hpp"

namespace thzleaf::eval {

using nlohmann::json;

namespace {

void check_pair(std::span<const double> g_p, std::span<const double> g_b) {
  if (g_p.empty()) throw InvalidArgument("metric on empty input");
  if (g_p.size() != g_b.size()) throw InvalidArgument("prediction and benchmark arrays differ in length");
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(name, e.what());
  }
}

}  // namespace

double mae(std::span<const double> g_p, std::span<const double> g_b) {
  check_pair(g_p, g_b);
  double s = 0.0;
  for (std::size_t i = 0; i < g_p.size(); ++i) s += std::abs(g_p[i] - g_b[i]);
  return s / static_cast<double>(g_p.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_pct_diff(std::span<const double> g_p, std::span<const double> g_b, double epsilon) {
  check_pair(g_p, g_b);
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  std::vector<double> r(g_p.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::abs(g_p[i] - g_b[i]) / (g_b[i] + epsilon);
  return median(std::move(r));
}

PredictionReport make_report(std::span<const double> g_p, std::span<const double> g_b, double epsilon) {
  PredictionReport r;
  r.g_p.assign(g_p.begin(), g_p.end());
  r.g_b.assign(g_b.begin(), g_b.end());
  r.delta.resize(g_p.size());
  for (std::size_t i = 0; i < g_p.size(); ++i) r.delta[i] = g_b[i] - g_p[i];
  r.mae = mae(g_p, g_b);
  r.median_pct_diff = median_pct_diff(g_p, g_b, epsilon);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<double> DtModel::predict(const Dataset& d) const {
  if (d.empty()) return {};
  const auto fm = features::build_feature_matrix(d, windows, onset);
  if (fm.cols() != mask.size()) throw InvalidArgument("feature layout does not match the model mask");
  const features::FeatureMatrix masked{fm.values, fm.names, mask};
  return ensemble.predict(masked.selected_values());
}

double DtModel::predict(const SampleRecord& r) const {
  Dataset one;
  one.records.push_back(r);
  return predict(one).front();
}

namespace {
constexpr const char* kDtFormat = "thzleaf-dt-model";
constexpr int kDtVersion = 1;
}  // namespace

std::string DtModel::to_json() const {
  json j;
  j["format"] = kDtFormat;
  j["version"] = kDtVersion;
  json w = json::array();
  for (const auto& win : windows.windows) w.push_back({win.start_ps, win.end_ps});
  j["windows"] = w;
  j["orders"] = windows.orders;
  j["reference_onset_ps"] = windows.reference_onset_ps;
  j["onset"] = {{"interpolation_factor", onset.interpolation_factor}, {"slope_threshold", onset.slope_threshold}};
  j["feature_names"] = feature_names;
  std::vector<int> m(mask.begin(), mask.end());
  j["mask"] = m;
  j["train_data_hash"] = hex64(train_data_hash);
  j["ensemble"] = json::parse(ensemble.to_json());
  return j.dump(1);
}

DtModel DtModel::from_json(const std::string& text) {
  DtModel m;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kDtFormat) throw FormatError("not a decision-tree model file");
    if (j.at("version").get<int>() != kDtVersion)
      throw FormatError("unsupported decision-tree model schema version " + std::to_string(j.at("version").get<int>()));
    m.windows.windows.clear();
    for (const auto& w : j.at("windows")) m.windows.windows.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
    m.windows.orders = j.at("orders").get<std::vector<int>>();
    m.windows.reference_onset_ps = j.at("reference_onset_ps").get<double>();
    m.windows.validate();
    m.onset.interpolation_factor = j.at("onset").at("interpolation_factor").get<int>();
    m.onset.slope_threshold = j.at("onset").at("slope_threshold").get<double>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    for (int v : j.at("mask").get<std::vector<int>>()) m.mask.push_back(static_cast<char>(v != 0));
    m.train_data_hash = parse_hex64(j.at("train_data_hash").get<std::string>());
    m.ensemble = dtree::TreeEnsemble::from_json(j.at("ensemble").dump());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed decision-tree model JSON: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid decision-tree model: ") + e.what());
  }
  if (m.mask.size() != m.windows.n_features() || m.feature_names.size() != m.mask.size())
    throw FormatError("feature mask does not match the window layout");
  std::size_t selected = 0;
  for (char c : m.mask) selected += c ? 1 : 0;
  if (selected != m.ensemble.n_features) throw FormatError("mask selects a different feature count than the ensemble");
  return m;
}

void DtModel::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << to_json() << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

DtModel DtModel::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

DtModel train_dt(const Dataset& train, const DtPipelineConfig& cfg, DtTrainLog* log) {
  if (train.size() < 10) throw PipelineError("dt-train", "training set needs at least 10 records");
  stage("dt-config", [&] {
    cfg.windows.validate();
    cfg.tree.validate();
    if (cfg.order_min < 0 || cfg.order_max > 20 || cfg.order_min > cfg.order_max)
      throw InvalidArgument("order range must satisfy 0 <= min <= max <= 20");
    if (cfg.search_trees < 1) throw InvalidArgument("search_trees must be >= 1");
    return 0;
  });
  DtTrainLog local;
  DtTrainLog& lg = log ? *log : local;

  const auto split = split_random_indices(train.size(), cfg.val_fraction, cfg.seed);
  const Dataset fit_set = train.subset(split.train);
  const Dataset val_set = train.subset(split.test);
  dtree::TreeParams search = cfg.tree;
  search.n_trees = cfg.search_trees;

  features::WindowSpec spec = cfg.windows;
  if (cfg.search_orders) {
    std::vector<int> range;
    for (int o = cfg.order_min; o <= cfg.order_max; ++o) range.push_back(o);
    lg.orders = stage("poly-order-search", [&] {
      return features::grid_search_poly_order(fit_set, val_set, spec, range, search, cfg.seed, cfg.onset);
    });
    spec.orders = lg.orders.orders;
  }

  const auto fm = stage("features", [&] { return features::build_feature_matrix(train, spec, cfg.onset); });
  const auto y = train.targets();

  dtree::TreeParams params = cfg.tree;
  if (cfg.grid_search) {
    lg.grid = stage("hyperparameter-search", [&] {
      return dtree::grid_search_hyperparams(fm.values, y, cfg.grid, search, cfg.cv_folds, cfg.seed);
    });
    params.n_samples_per_tree = lg.grid.best.n_samples_per_tree;
    params.max_depth = lg.grid.best.max_depth;
    params.max_features = lg.grid.best.max_features;
  }

  std::vector<char> mask(fm.cols(), 1);
  if (!cfg.fixed_features.empty()) {
    std::fill(mask.begin(), mask.end(), 0);
    for (const auto& name : cfg.fixed_features) {
      const auto it = std::find(fm.names.begin(), fm.names.end(), name);
      if (it == fm.names.end()) throw PipelineError("feature-mask", "unknown feature name '" + name + "'");
      mask[static_cast<std::size_t>(it - fm.names.begin())] = 1;
    }
  } else if (cfg.rfe) {
    lg.rfe = stage("feature-elimination", [&] {
      dtree::TreeParams p = params;
      p.n_trees = cfg.search_trees;
      const auto yf = fit_set.targets();
      const auto yv = val_set.targets();
      return features::recursive_feature_elimination(fm.values.select_rows(split.train), yf,
                                                     fm.values.select_rows(split.test), yv, p, cfg.seed,
                                                     cfg.rfe_options);
    });
    mask = lg.rfe.mask;
  }

  DtModel model;
  model.windows = spec;
  model.onset = cfg.onset;
  model.mask = mask;
  model.feature_names = fm.names;
  model.train_data_hash = train.content_hash();
  const features::FeatureMatrix masked{fm.values, fm.names, mask};
  model.ensemble = stage("bagging", [&] { return dtree::fit_bagged(masked.selected_values(), y, params, cfg.seed); });
  for (auto j : masked.selected()) model.ensemble.feature_names.push_back(fm.names[j]);
  return model;
}

// ---------------------------------------------------------------------------

cnn::TrainResult train_cnn(const Dataset& train, const CnnPipelineConfig& cfg) {
  return stage("cnn-train", [&] {
    auto tc = cfg.train;
    tc.input_scale = cfg.input_scale;
    return cnn::train(train, cfg.arch, tc);
  });
}

cnn::CnnModel& chosen_model(cnn::TrainResult& r, const CnnPipelineConfig& cfg) {
  return cfg.use_best ? r.best_model : r.final_model;
}

namespace {

template <class F>
TimingStats time_inference(std::size_t n, const EvalConfig& cfg, F&& infer) {
  TimingStats t;
  if (n == 0 || cfg.timing_runs <= 0) return t;
  for (int i = 0; i < cfg.timing_warmup; ++i) infer(static_cast<std::size_t>(i) % n);
  std::vector<double> ms;
  for (int i = 0; i < cfg.timing_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    infer(static_cast<std::size_t>(i) % n);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  double m = 0.0;
  for (double v : ms) m += v;
  m /= static_cast<double>(ms.size());
  double s = 0.0;
  for (double v : ms) s += (v - m) * (v - m);
  t.mean_ms = m;
  t.std_ms = ms.size() > 1 ? std::sqrt(s / static_cast<double>(ms.size() - 1)) : 0.0;
  t.runs = cfg.timing_runs;
  return t;
}

void fill_common(ModelResult& r, const Dataset& test, std::span<const double> g_p, const EvalConfig& cfg) {
  const auto g_b = test.targets();
  r.report = make_report(g_p, g_b, cfg.epsilon);
  double lo = 0.0, hi = 0.0;
  std::size_t nlo = 0, nhi = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    r.series_id.push_back(test.records[i].series_id);
    r.acq_index.push_back(test.records[i].acq_index);
    if (g_b[i] < cfg.low_g_threshold) {
      lo += std::abs(r.report.delta[i]);
      ++nlo;
    } else {
      hi += std::abs(r.report.delta[i]);
      ++nhi;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.low_g_mean_abs_delta = nlo ? lo / static_cast<double>(nlo) : nan;
  r.high_g_mean_abs_delta = nhi ? hi / static_cast<double>(nhi) : nan;
}

}  // namespace

ModelResult evaluate_dt(const DtModel& model, const Dataset& test, const EvalConfig& cfg) {
  if (test.empty()) throw PipelineError("dt-eval", "empty test set");
  ModelResult r;
  r.model = "dt";
  const auto g_p = stage("dt-eval", [&] { return model.predict(test); });
  fill_common(r, test, g_p, cfg);
  r.train_test_leak = test.content_hash() == model.train_data_hash;
  r.timing = time_inference(test.size(), cfg, [&](std::size_t i) { return model.predict(test.records[i]); });
  return r;
}

ModelResult evaluate_cnn(cnn::CnnModel& model, const Dataset& test, const EvalConfig& cfg) {
  if (test.empty()) throw PipelineError("cnn-eval", "empty test set");
  ModelResult r;
  r.model = "cnn";
  const auto g_p = stage("cnn-eval", [&] { return model.predict(test); });
  fill_common(r, test, g_p, cfg);
  r.train_test_leak = test.content_hash() == model.data_hash;
  r.timing = time_inference(test.size(), cfg, [&](std::size_t i) {
    return model.predict(test.records[i].trace, test.records[i].a);
  });
  return r;
}

// ---------------------------------------------------------------------------

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Random: return "random";
    case Scenario::CaseI: return "I";
    case Scenario::CaseII: return "II";
    case Scenario::CaseIII: return "III";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "random" || s == "Random") return Scenario::Random;
  if (s == "I" || s == "1" || s == "i") return Scenario::CaseI;
  if (s == "II" || s == "2" || s == "ii") return Scenario::CaseII;
  if (s == "III" || s == "3" || s == "iii") return Scenario::CaseIII;
  throw InvalidArgument("unknown scenario '" + s + "' (expected random, I, II or III)");
}

const ModelResult& ScenarioReport::model(const std::string& name) const {
  for (const auto& m : models)
    if (m.model == name) return m;
  throw InvalidArgument("report has no results for model '" + name + "'");
}

std::string ScenarioReport::to_json() const {
  json j;
  j["format"] = "thzleaf-report";
  j["version"] = 1;
  j["scenario"] = scenario;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["held_out_series"] = held_out_series;
  json arr = json::array();
  for (const auto& m : models) {
    json jm;
    jm["model"] = m.model;
    jm["n"] = m.report.g_p.size();
    jm["mae"] = m.report.mae;
    jm["median_pct_diff"] = m.report.median_pct_diff;
    jm["low_g_mean_abs_delta"] = m.low_g_mean_abs_delta;
    jm["high_g_mean_abs_delta"] = m.high_g_mean_abs_delta;
    jm["train_test_leak"] = m.train_test_leak;
    std::map<int, std::pair<double, std::size_t>> per_series;
    for (std::size_t i = 0; i < m.series_id.size(); ++i) {
      auto& e = per_series[m.series_id[i]];
      e.first += std::abs(m.report.delta[i]);
      ++e.second;
    }
    json js = json::array();
    for (const auto& [sid, e] : per_series)
      js.push_back({{"series_id", sid}, {"n", e.second}, {"mae", e.first / static_cast<double>(e.second)}});
    jm["series"] = js;
    jm["timing"] = {{"mean_ms", m.timing.mean_ms}, {"std_ms", m.timing.std_ms}, {"runs", m.timing.runs}};
    arr.push_back(std::move(jm));
  }
  j["models"] = std::move(arr);
  return j.dump(1);
}

std::string ScenarioReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "model,series_id,acq_index,g_b,g_p,delta\n";
  for (const auto& m : models)
    for (std::size_t i = 0; i < m.report.g_p.size(); ++i)
      os << m.model << ',' << m.series_id[i] << ',' << m.acq_index[i] << ',' << m.report.g_b[i] << ','
         << m.report.g_p[i] << ',' << m.report.delta[i] << '\n';
  return os.str();
}

ScenarioReport run_pipeline_dt(const Dataset& train, const Dataset& test, const DtPipelineConfig& cfg,
                               const EvalConfig& eval, DtModel* model_out, DtTrainLog* log) {
  ScenarioReport rep;
  rep.scenario = "custom";
  rep.n_train = train.size();
  rep.n_test = test.size();
  auto model = train_dt(train, cfg, log);
  rep.models.push_back(evaluate_dt(model, test, eval));
  if (model_out) *model_out = std::move(model);
  return rep;
}

ScenarioReport run_pipeline_cnn(const Dataset& train, const Dataset& test, const CnnPipelineConfig& cfg,
                                const EvalConfig& eval, cnn::TrainResult* result_out) {
  ScenarioReport rep;
  rep.scenario = "custom";
  rep.n_train = train.size();
  rep.n_test = test.size();
  auto res = train_cnn(train, cfg);
  rep.models.push_back(evaluate_cnn(chosen_model(res, cfg), test, eval));
  if (result_out) *result_out = std::move(res);
  return rep;
}

std::pair<Dataset, Dataset> scenario_split(Scenario id, const Dataset& top, const Dataset* bottom,
                                           const ScenarioOptions& opt, std::vector<int>* held_out) {
  switch (id) {
    case Scenario::Random:
      return split_random(top, opt.test_fraction, opt.split_seed);
    case Scenario::CaseI: {
      std::vector<int> held = opt.held_out_series;
      if (held.empty()) {
        auto ids = top.series_ids();
        if (ids.size() <= opt.n_held_out)
          throw PipelineError("scenario", "Case I needs more than " + std::to_string(opt.n_held_out) + " series");
        Rng rng(opt.split_seed);
        rng.shuffle(std::span<int>(ids));
        held.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(opt.n_held_out));
        std::sort(held.begin(), held.end());
      }
      if (held_out) *held_out = held;
      return split_by_series(top, held);
    }
    case Scenario::CaseII: {
      if (!bottom) throw PipelineError("scenario", "Case II needs a bottom-side dataset (missing input: bottom)");
      Dataset all = top;
      all.records.insert(all.records.end(), bottom->records.begin(), bottom->records.end());
      all.validate();
      return split_random(all, opt.test_fraction, opt.split_seed);
    }
    case Scenario::CaseIII: {
      if (!bottom || bottom->empty())
        throw PipelineError("scenario", "Case III needs a non-empty bottom-side dataset (missing input: bottom)");
      if (top.empty()) throw PipelineError("scenario", "Case III needs a non-empty top-side dataset");
      return {top, *bottom};
    }
  }
  throw InvalidArgument("unknown scenario");
}

ScenarioReport run_scenario(Scenario id, const Dataset& top, const Dataset* bottom, const PipelineConfigs& configs,
                            const ScenarioOptions& opt) {
  std::vector<int> held;
  auto [train, test] = scenario_split(id, top, bottom, opt, &held);
  if (train.empty() || test.empty())
    throw PipelineError("scenario", "scenario " + to_string(id) + " produced an empty train or test set");
  ScenarioReport rep;
  rep.scenario = to_string(id);
  rep.n_train = train.size();
  rep.n_test = test.size();
  rep.held_out_series = held;
  if (opt.run_dt) {
    const auto model = train_dt(train, configs.dt);
    rep.models.push_back(evaluate_dt(model, test, configs.eval));
  }
  if (opt.run_cnn) {
    auto res = train_cnn(train, configs.cnn);
    rep.models.push_back(evaluate_cnn(chosen_model(res, configs.cnn), test, configs.eval));
  }
  return rep;
}

}  // namespace thzleaf::eval
