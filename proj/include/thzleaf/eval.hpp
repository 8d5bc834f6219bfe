#pragma once

// Metrics, end-to-end pipelines for both regressors and the generalisation
// scenarios.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thzleaf/cnn.hpp"
#include "thzleaf/core_data.hpp"
#include "thzleaf/dtree.hpp"
#include "thzleaf/features.hpp"

namespace thzleaf::eval {

/// mean |g_p - g_b|
double mae(std::span<const double> g_p, std::span<const double> g_b);
/// median of |g_p - g_b| / (g_b + epsilon); even counts average the central pair.
double median_pct_diff(std::span<const double> g_p, std::span<const double> g_b, double epsilon = 0.1);
double median(std::vector<double> v);

PredictionReport make_report(std::span<const double> g_p, std::span<const double> g_b, double epsilon = 0.1);

struct EvalConfig {
  double epsilon = 0.1;  // mg
  int timing_warmup = 10;
  int timing_runs = 100;
  double low_g_threshold = 7.0;  // mg
};

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  int runs = 0;
};

// ---------------------------------------------------------------------------
// Decision-tree pipeline

struct DtPipelineConfig {
  features::WindowSpec windows{};
  features::OnsetParams onset{};
  bool search_orders = true;
  int order_min = 0;
  int order_max = 20;
  bool grid_search = true;
  dtree::ParamGrid grid{};
  std::size_t cv_folds = 5;
  bool rfe = true;
  features::RfeOptions rfe_options{};
  /// When non-empty, these feature names form the mask and RFE is skipped.
  std::vector<std::string> fixed_features;
  double val_fraction = 0.15;  // share of training data used to validate orders and RFE
  int search_trees = 30;       // ensemble size inside searches
  dtree::TreeParams tree{};
  std::uint64_t seed = 1;
};

/// Feature extraction settings, selected columns and the fitted ensemble.
struct DtModel {
  features::WindowSpec windows;
  features::OnsetParams onset;
  std::vector<char> mask;
  std::vector<std::string> feature_names;  // all columns of the unmasked layout
  dtree::TreeEnsemble ensemble;
  std::uint64_t train_data_hash = 0;

  std::vector<double> predict(const Dataset& d) const;
  double predict(const SampleRecord& r) const;

  std::string to_json() const;
  static DtModel from_json(const std::string& text);
  void save(const std::filesystem::path& file) const;
  static DtModel load(const std::filesystem::path& file);
};

struct DtTrainLog {
  features::OrderSearchResult orders;
  dtree::GridSearchResult grid;
  features::RfeResult rfe;
};

/// features -> polynomial-order search -> hyperparameter grid search -> RFE ->
/// final bagged fit. Stage failures surface as PipelineError.
DtModel train_dt(const Dataset& train, const DtPipelineConfig& cfg, DtTrainLog* log = nullptr);

// ---------------------------------------------------------------------------
// CNN pipeline

struct CnnPipelineConfig {
  cnn::Architecture arch{};
  cnn::TrainConfig train{};
  double input_scale = 4.0;
  bool use_best = true;  // evaluate the lowest-validation-loss snapshot
};

cnn::TrainResult train_cnn(const Dataset& train, const CnnPipelineConfig& cfg);
cnn::CnnModel& chosen_model(cnn::TrainResult& r, const CnnPipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Reports

struct ModelResult {
  std::string model;  // "dt" or "cnn"
  PredictionReport report;
  std::vector<int> series_id;
  std::vector<int> acq_index;
  TimingStats timing;
  double low_g_mean_abs_delta = 0.0;
  double high_g_mean_abs_delta = 0.0;
  bool train_test_leak = false;
};

ModelResult evaluate_dt(const DtModel& model, const Dataset& test, const EvalConfig& cfg);
ModelResult evaluate_cnn(cnn::CnnModel& model, const Dataset& test, const EvalConfig& cfg);

enum class Scenario { Random, CaseI, CaseII, CaseIII };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct ScenarioReport {
  std::string scenario;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::vector<int> held_out_series;
  std::vector<ModelResult> models;

  const ModelResult& model(const std::string& name) const;
  /// Summary, metrics and timing; timing lives under "timing" keys only.
  std::string to_json() const;
  /// One row per (model, test record): model, series_id, acq_index, g_b, g_p, delta.
  std::string to_csv() const;
};

struct ScenarioOptions {
  double test_fraction = 0.15;
  std::uint64_t split_seed = 7;
  /// Case I: explicit held-out series, or n_held_out drawn with split_seed.
  std::vector<int> held_out_series;
  std::size_t n_held_out = 2;
  bool run_dt = true;
  bool run_cnn = true;
};

struct PipelineConfigs {
  DtPipelineConfig dt{};
  CnnPipelineConfig cnn{};
  EvalConfig eval{};
};

ScenarioReport run_pipeline_dt(const Dataset& train, const Dataset& test, const DtPipelineConfig& cfg,
                               const EvalConfig& eval, DtModel* model_out = nullptr, DtTrainLog* log = nullptr);
ScenarioReport run_pipeline_cnn(const Dataset& train, const Dataset& test, const CnnPipelineConfig& cfg,
                                const EvalConfig& eval, cnn::TrainResult* result_out = nullptr);

/// Train/test sets for a scenario:
///   Random   - random split of `top`;
///   CaseI    - series hold-out on `top`;
///   CaseII   - random split of top + bottom (bottom may be empty);
///   CaseIII  - train on all of `top`, test on all of `bottom`.
std::pair<Dataset, Dataset> scenario_split(Scenario id, const Dataset& top, const Dataset* bottom,
                                           const ScenarioOptions& opt, std::vector<int>* held_out = nullptr);

ScenarioReport run_scenario(Scenario id, const Dataset& top, const Dataset* bottom, const PipelineConfigs& configs,
                            const ScenarioOptions& opt);

}  // namespace thzleaf::eval
