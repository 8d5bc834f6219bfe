#include "thzleaf/config.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "thzleaf/errors.hpp"

namespace thzleaf {

namespace {

// Every configurable field, in file order. C is RunConfig or const RunConfig.
template <class C, class V>
void visit_fields(C& c, V& v) {
  auto& s = c.sim;
  v("sim", "n_series", s.n_series);
  v("sim", "acquisitions_per_series", s.acquisitions_per_series);
  v("sim", "first_series_id", s.first_series_id);
  v("sim", "orientation", s.orientation);
  v("sim", "seed", s.seed);
  v("sim", "n_t", s.n_t);
  v("sim", "dt_ps", s.dt);
  v("sim", "t0_ps", s.t0);
  v("sim", "pad_factor", s.pad_factor);
  v("sim", "pulse_center_ps", s.pulse.center_ps);
  v("sim", "pulse_width_ps", s.pulse.width_ps);
  v("sim", "pulse_amplitude", s.pulse.amplitude);
  v("sim", "leaf_thickness_mm", s.leaf.thickness_mm);
  v("sim", "leaf_water_fraction", s.leaf.water_fraction);
  v("sim", "leaf_upper_share", s.leaf.upper_share);
  v("sim", "leaf_water_fraction_contrast", s.leaf.water_fraction_contrast);
  v("sim", "leaf_eps_dry", s.leaf.eps_dry);
  v("sim", "plastic_thickness_mm", s.leaf.plastic_thickness_mm);
  v("sim", "plastic_n", s.leaf.plastic_n);
  v("sim", "plastic_kappa", s.leaf.plastic_kappa);
  v("sim", "roughness_cutoff_thz", s.leaf.roughness_cutoff_thz);
  v("sim", "water_eps_static", s.leaf.water.eps_static);
  v("sim", "water_eps_mid", s.leaf.water.eps_mid);
  v("sim", "water_eps_inf", s.leaf.water.eps_inf);
  v("sim", "water_tau_slow_ps", s.leaf.water.tau_slow_ps);
  v("sim", "water_tau_fast_ps", s.leaf.water.tau_fast_ps);
  v("sim", "leaf_water_drift", s.leaf_water_drift);
  v("sim", "leaf_water_jitter", s.leaf_water_jitter);
  v("sim", "contact_angle_deg", s.droplets.contact_angle_deg);
  v("sim", "bottom_contact_angle_deg", s.bottom_contact_angle_deg);
  v("sim", "droplet_median_diameter_mm", s.droplets.median_diameter_mm);
  v("sim", "droplet_sigma_log", s.droplets.sigma_log);
  v("sim", "thickness_classes", s.droplets.thickness_classes);
  v("sim", "thickness_grid_mm", s.droplets.thickness_grid_mm);
  v("sim", "deposition_loss_max", s.droplets.deposition_loss_max);
  v("sim", "beam_area_mm2", s.beam_area_mm2);
  v("sim", "max_g", s.max_g);
  v("sim", "runoff_min_fraction", s.runoff_min_fraction);
  v("sim", "spray_shape", s.spray_shape);
  v("sim", "gravimetric_noise_mg", s.gravimetric_noise_mg);
  v("sim", "humidity_min", s.humidity_min);
  v("sim", "humidity_max", s.humidity_max);
  v("sim", "humidity_swing", s.humidity_swing);
  v("sim", "humidity_noise", s.humidity_noise);
  v("sim", "vapor_path_m", s.vapor_path_m);
  v("sim", "vapor_lines", s.vapor_lines);
  v("sim", "snr_db", s.snr_db);
  v("sim", "jitter_samples", s.jitter_samples);
  v("sim", "noise", s.noise);

  auto& dt = c.pipeline.dt;
  v("features", "windows", dt.windows.windows);
  v("features", "orders", dt.windows.orders);
  v("features", "reference_onset_ps", dt.windows.reference_onset_ps);
  v("features", "interpolation_factor", dt.onset.interpolation_factor);
  v("features", "slope_threshold", dt.onset.slope_threshold);
  v("features", "search_orders", dt.search_orders);
  v("features", "order_min", dt.order_min);
  v("features", "order_max", dt.order_max);
  v("features", "rfe", dt.rfe);
  v("features", "rfe_tolerance", dt.rfe_options.tolerance);
  v("features", "rfe_min_r2", dt.rfe_options.min_r2);
  v("features", "rfe_repeats", dt.rfe_options.n_repeats);
  v("features", "rfe_min_features", dt.rfe_options.min_features);
  v("features", "fixed_features", dt.fixed_features);

  v("dtree", "n_trees", dt.tree.n_trees);
  v("dtree", "max_depth", dt.tree.max_depth);
  v("dtree", "min_samples_leaf", dt.tree.min_samples_leaf);
  v("dtree", "criterion", dt.tree.criterion);
  v("dtree", "n_samples_per_tree", dt.tree.n_samples_per_tree);
  v("dtree", "max_features", dt.tree.max_features);
  v("dtree", "grid_search", dt.grid_search);
  v("dtree", "grid_n_samples_per_tree", dt.grid.n_samples_per_tree);
  v("dtree", "grid_max_depth", dt.grid.max_depth);
  v("dtree", "grid_max_features", dt.grid.max_features);
  v("dtree", "cv_folds", dt.cv_folds);
  v("dtree", "search_trees", dt.search_trees);
  v("dtree", "val_fraction", dt.val_fraction);
  v("dtree", "seed", dt.seed);

  auto& cn = c.pipeline.cnn;
  v("cnn", "channels", cn.arch.channels);
  v("cnn", "hidden", cn.arch.hidden);
  v("cnn", "kernel", cn.arch.kernel);
  v("cnn", "use_humidity", cn.arch.use_humidity);
  v("cnn", "input_scale", cn.input_scale);
  v("cnn", "epochs", cn.train.epochs);
  v("cnn", "batch_size", cn.train.batch_size);
  v("cnn", "val_fraction", cn.train.val_fraction);
  v("cnn", "learning_rate", cn.train.adam.lr);
  v("cnn", "beta1", cn.train.adam.beta1);
  v("cnn", "beta2", cn.train.adam.beta2);
  v("cnn", "adam_eps", cn.train.adam.eps);
  v("cnn", "seed", cn.train.seed);
  v("cnn", "use_best", cn.use_best);

  auto& ev = c.pipeline.eval;
  auto& sc = c.scenario;
  v("eval", "epsilon", ev.epsilon);
  v("eval", "low_g_threshold", ev.low_g_threshold);
  v("eval", "timing_warmup", ev.timing_warmup);
  v("eval", "timing_runs", ev.timing_runs);
  v("eval", "test_fraction", sc.test_fraction);
  v("eval", "split_seed", sc.split_seed);
  v("eval", "held_out_series", sc.held_out_series);
  v("eval", "n_held_out", sc.n_held_out);
  v("eval", "run_dt", sc.run_dt);
  v("eval", "run_cnn", sc.run_cnn);

  v("run", "threads", c.threads);
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string scalar(const YAML::Node& n) {
  if (!n.IsScalar()) throw DecodeError("expected a scalar value");
  return n.Scalar();
}

long long as_integer(const YAML::Node& n) {
  const std::string s = scalar(n);
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DecodeError("expected an integer, got '" + s + "'");
  return v;
}

void decode(const YAML::Node& n, int& out) {
  const long long v = as_integer(n);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw DecodeError("integer out of range");
  out = static_cast<int>(v);
}

template <class U>
  requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
void decode(const YAML::Node& n, U& out) {
  const std::string s = scalar(n);
  unsigned long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v > std::numeric_limits<U>::max())
    throw DecodeError("expected a non-negative integer, got '" + s + "'");
  out = static_cast<U>(v);
}

void decode(const YAML::Node& n, double& out) {
  scalar(n);
  try {
    out = n.as<double>();
  } catch (const YAML::Exception&) {
    throw DecodeError("expected a number, got '" + n.Scalar() + "'");
  }
}

void decode(const YAML::Node& n, bool& out) {
  scalar(n);
  try {
    out = n.as<bool>();
  } catch (const YAML::Exception&) {
    throw DecodeError("expected true or false, got '" + n.Scalar() + "'");
  }
}

void decode(const YAML::Node& n, std::string& out) { out = scalar(n); }
void decode(const YAML::Node& n, Orientation& out) { out = orientation_from_string(scalar(n)); }
void decode(const YAML::Node& n, dtree::Criterion& out) { out = dtree::criterion_from_string(scalar(n)); }

void expect_tuple(const YAML::Node& n, std::size_t k, const char* what) {
  if (!n.IsSequence() || n.size() != k) throw DecodeError(std::string("expected ") + what);
}

void decode(const YAML::Node& n, sim::cplx& out) {
  expect_tuple(n, 2, "[real, imag]");
  double re = 0, im = 0;
  decode(n[0], re);
  decode(n[1], im);
  out = {re, im};
}

void decode(const YAML::Node& n, features::Window& out) {
  expect_tuple(n, 2, "[start_ps, end_ps]");
  decode(n[0], out.start_ps);
  decode(n[1], out.end_ps);
}

void decode(const YAML::Node& n, sim::VaporLine& out) {
  expect_tuple(n, 3, "[center_thz, strength, half_width_thz]");
  decode(n[0], out.center_thz);
  decode(n[1], out.strength);
  decode(n[2], out.half_width_thz);
}

template <class T>
void decode(const YAML::Node& n, std::vector<T>& out) {
  if (!n.IsSequence()) throw DecodeError("expected a list");
  std::vector<T> v(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) decode(n[i], v[i]);
  out = std::move(v);
}

struct Reader {
  const YAML::Node& root;
  std::string source;
  bool line_anchored;
  std::set<std::string> known;

  template <class T>
  void operator()(const std::string& section, const std::string& key, T& field) {
    known.insert(section + "." + key);
    const YAML::Node s = root[section];
    if (!s || !s.IsMap()) return;
    const YAML::Node n = s[key];
    if (!n) return;
    try {
      decode(n, field);
    } catch (const std::exception& e) {
      fail(n, section + "." + key + ": " + e.what());
    }
  }

  [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
    if (line_anchored) throw ConfigError(source, static_cast<std::size_t>(n.Mark().line) + 1, msg);
    throw ConfigError(source + ": " + msg);
  }

  void check_unknown() const {
    if (!root || root.IsNull()) return;
    if (!root.IsMap()) fail(root, "top level must be a mapping of sections");
    for (const auto& sec : root) {
      const auto name = sec.first.as<std::string>();
      if (!sec.second.IsMap()) {
        if (sec.second.IsNull()) continue;
        fail(sec.first, "section '" + name + "' must be a mapping");
      }
      for (const auto& kv : sec.second) {
        const auto key = name + "." + kv.first.as<std::string>();
        if (!known.count(key)) fail(kv.first, "unknown key '" + key + "'");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Encoding

void encode(YAML::Emitter& e, int v) { e << v; }
template <class U>
  requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
void encode(YAML::Emitter& e, U v) {
  e << static_cast<unsigned long long>(v);
}
void encode(YAML::Emitter& e, double v) { e << v; }
void encode(YAML::Emitter& e, bool v) { e << (v ? "true" : "false"); }
void encode(YAML::Emitter& e, const std::string& v) { e << YAML::DoubleQuoted << v; }
void encode(YAML::Emitter& e, Orientation v) { e << to_string(v); }
void encode(YAML::Emitter& e, dtree::Criterion v) { e << dtree::to_string(v); }
void encode(YAML::Emitter& e, const sim::cplx& v) {
  e << YAML::Flow << YAML::BeginSeq << v.real() << v.imag() << YAML::EndSeq;
}
void encode(YAML::Emitter& e, const features::Window& w) {
  e << YAML::Flow << YAML::BeginSeq << w.start_ps << w.end_ps << YAML::EndSeq;
}
void encode(YAML::Emitter& e, const sim::VaporLine& l) {
  e << YAML::Flow << YAML::BeginSeq << l.center_thz << l.strength << l.half_width_thz << YAML::EndSeq;
}
template <class T>
void encode(YAML::Emitter& e, const std::vector<T>& v) {
  e << YAML::Flow << YAML::BeginSeq;
  for (const auto& x : v) encode(e, x);
  e << YAML::EndSeq;
}

struct Writer {
  YAML::Emitter out;
  std::string current;

  template <class T>
  void operator()(const std::string& section, const std::string& key, const T& field) {
    if (section != current) {
      if (!current.empty()) out << YAML::EndMap;
      out << YAML::Key << section << YAML::Value << YAML::BeginMap;
      current = section;
    }
    out << YAML::Key << key << YAML::Value;
    encode(out, field);
  }
};

struct KeyCollector {
  std::vector<std::string> keys;
  template <class T>
  void operator()(const std::string& section, const std::string& key, const T&) {
    keys.push_back(section + "." + key);
  }
};

YAML::Node load_yaml(const std::string& text, const std::string& source) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source, static_cast<std::size_t>(e.mark.line) + 1, e.msg);
  }
}

void validate(const RunConfig& c, const std::string& source) {
  try {
    c.sim.validate();
    c.pipeline.dt.windows.validate();
    c.pipeline.dt.tree.validate();
    c.pipeline.cnn.arch.validate();
    if (c.pipeline.dt.grid.n_samples_per_tree.empty() || c.pipeline.dt.grid.max_depth.empty() ||
        c.pipeline.dt.grid.max_features.empty())
      throw InvalidArgument("grid lists must not be empty");
    if (c.pipeline.dt.cv_folds < 2) throw InvalidArgument("cv_folds must be >= 2");
    if (!(c.pipeline.eval.epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
    if (!(c.scenario.test_fraction > 0.0 && c.scenario.test_fraction < 1.0))
      throw InvalidArgument("test_fraction must be in (0, 1)");
    if (!(c.pipeline.cnn.input_scale > 0.0)) throw InvalidArgument("input_scale must be positive");
    if (c.pipeline.cnn.train.epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (c.pipeline.cnn.train.batch_size < 2) throw InvalidArgument("batch_size must be >= 2");
  } catch (const InvalidArgument& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

}  // namespace

std::string RunConfig::to_yaml() const {
  Writer w;
  w.out.SetDoublePrecision(17);
  w.out << YAML::BeginMap;
  visit_fields(*this, w);
  w.out << YAML::EndMap << YAML::EndMap;
  return std::string(w.out.c_str()) + "\n";
}

void RunConfig::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << to_yaml();
  if (!out) throw IoError("write failed for " + file.string());
}

RunConfig parse_config(const std::string& text, const std::string& source, const std::vector<std::string>& overrides) {
  RunConfig c;
  const YAML::Node root = load_yaml(text, source);
  Reader file{root, source, true, {}};
  visit_fields(c, file);
  file.check_unknown();

  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    const auto dot = ov.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("--set " + ov + ": expected section.key=value");
    const std::string section = ov.substr(0, dot), key = ov.substr(dot + 1, eq - dot - 1);
    YAML::Node value;
    try {
      value = YAML::Load(ov.substr(eq + 1));
    } catch (const YAML::ParserException& e) {
      throw ConfigError("--set " + ov + ": " + e.msg);
    }
    YAML::Node tree;
    tree[section][key] = value.IsNull() ? YAML::Node(std::string()) : value;
    Reader r{tree, "--set " + ov, false, {}};
    visit_fields(c, r);
    r.check_unknown();
  }
  validate(c, source);
  return c;
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  if (file.empty()) return parse_config("", "<defaults>", overrides);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), file.string(), overrides);
}

std::vector<std::string> config_keys() {
  KeyCollector k;
  const RunConfig c;
  visit_fields(c, k);
  return k.keys;
}

}  // namespace thzleaf
