#include "thzleaf/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "thzleaf/errors.hpp"
#include "thzleaf/fft.hpp"
#include "thzleaf/parallel.hpp"

namespace thzleaf::features {

void WindowSpec::validate() const {
  if (windows.empty()) throw InvalidArgument("window spec has no windows");
  if (windows.size() != orders.size()) throw InvalidArgument("window spec needs one order per window");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!(windows[i].end_ps > windows[i].start_ps)) throw InvalidArgument("window end must exceed its start");
    if (i > 0 && windows[i].start_ps < windows[i - 1].end_ps)
      throw InvalidArgument("windows must be increasing and non-overlapping");
    if (orders[i] < 0 || orders[i] > 20) throw InvalidArgument("polynomial order must be in [0, 20]");
  }
}

std::size_t WindowSpec::n_features() const {
  std::size_t n = 2;
  for (int o : orders) n += static_cast<std::size_t>(o) + 1;
  return n;
}

std::vector<std::string> WindowSpec::feature_names() const {
  std::vector<std::string> names;
  for (std::size_t w = 0; w < orders.size(); ++w)
    for (int k = 0; k <= orders[w]; ++k) names.push_back("w" + std::to_string(w + 1) + ":c" + std::to_string(k));
  names.push_back("t_start");
  names.push_back("a");
  return names;
}

// ---------------------------------------------------------------------------

std::vector<double> interpolate_bandlimited(std::span<const double> x, int factor) {
  if (factor < 1) throw InvalidArgument("interpolation factor must be >= 1");
  const std::size_t n = x.size();
  if (n < 2) throw InvalidArgument("interpolation needs at least 2 samples");
  const std::size_t m = n * static_cast<std::size_t>(factor);
  auto spec = rfft(x, n);
  std::vector<std::complex<double>> padded(m / 2 + 1);
  std::copy(spec.begin(), spec.end(), padded.begin());
  if (n % 2 == 0 && factor > 1) padded[n / 2] *= 0.5;  // split the Nyquist bin between +/- frequencies
  auto y = irfft(padded, m);
  for (auto& v : y) v *= factor;
  return y;
}

double detect_onset(const TimeTrace& trace, const OnsetParams& params) {
  if (params.interpolation_factor < 1) throw InvalidArgument("interpolation factor must be >= 1");
  if (!(params.slope_threshold > 0.0)) throw InvalidArgument("slope threshold must be positive");
  const auto z = interpolate_bandlimited(trace.as_double(), params.interpolation_factor);
  const double h = trace.dt / params.interpolation_factor;
  const auto peak_it = std::max_element(z.begin(), z.end());
  const double peak = *peak_it;
  if (!(peak > 0.0)) throw InvalidArgument("onset detection needs a positive maximum");
  auto slope = [&](std::size_t i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(i + 1, z.size() - 1);
    return (z[hi] - z[lo]) / (peak * h * static_cast<double>(hi - lo));
  };
  auto j = static_cast<std::size_t>(peak_it - z.begin());
  while (j > 0 && slope(j) <= params.slope_threshold) --j;
  if (slope(j) <= params.slope_threshold) throw NumericError("onset slope threshold never exceeded");
  while (j > 0 && slope(j - 1) > params.slope_threshold) --j;
  return trace.t0 + h * static_cast<double>(j);
}

// ---------------------------------------------------------------------------

std::vector<double> fit_polynomial(std::span<const double> t, std::span<const double> y, int n, double lo, double hi) {
  if (n < 0) throw InvalidArgument("polynomial degree must be >= 0");
  if (t.size() != y.size()) throw InvalidArgument("abscissae and ordinates differ in length");
  const std::size_t m = t.size();
  const auto p = static_cast<std::size_t>(n) + 1;
  if (m < p) throw InvalidArgument("window holds fewer samples than coefficients");
  if (!(hi > lo)) throw InvalidArgument("empty fit interval");

  // Column-major Vandermonde in the rescaled variable, augmented with y.
  std::vector<double> a(m * p);
  std::vector<double> b(y.begin(), y.end());
  for (std::size_t i = 0; i < m; ++i) {
    const double u = (2.0 * t[i] - (lo + hi)) / (hi - lo);
    double v = 1.0;
    for (std::size_t k = 0; k < p; ++k) {
      a[k * m + i] = v;
      v *= u;
    }
  }
  std::vector<double> diag(p);
  double max_diag = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    double* col = &a[k * m];
    double norm = 0.0;
    for (std::size_t i = k; i < m; ++i) norm += col[i] * col[i];
    norm = std::sqrt(norm);
    const double alpha = col[k] > 0.0 ? -norm : norm;
    diag[k] = alpha;
    max_diag = std::max(max_diag, std::abs(alpha));
    if (norm == 0.0) continue;
    col[k] -= alpha;  // Householder vector stored in place
    const double vnorm2 = [&] {
      double s = 0.0;
      for (std::size_t i = k; i < m; ++i) s += col[i] * col[i];
      return s;
    }();
    auto reflect = [&](double* c) {
      double d = 0.0;
      for (std::size_t i = k; i < m; ++i) d += col[i] * c[i];
      const double f = 2.0 * d / vnorm2;
      for (std::size_t i = k; i < m; ++i) c[i] -= f * col[i];
    };
    for (std::size_t j = k + 1; j < p; ++j) reflect(&a[j * m]);
    reflect(b.data());
  }
  for (std::size_t k = 0; k < p; ++k)
    if (std::abs(diag[k]) <= 1e-13 * max_diag) throw NumericError("rank-deficient polynomial fit");
  std::vector<double> c(p);
  for (std::size_t k = p; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < p; ++j) s -= a[j * m + k] * c[j];
    c[k] = s / diag[k];
  }
  return c;
}

namespace {

std::pair<std::size_t, std::size_t> window_range(const TimeTrace& trace, const Window& w) {
  const double lo = std::ceil((w.start_ps - trace.t0) / trace.dt - 1e-9);
  const double hi = std::floor((w.end_ps - trace.t0) / trace.dt + 1e-9);
  const double last = static_cast<double>(trace.size()) - 1.0;
  const double a = std::max(0.0, lo), b = std::min(last, hi);
  if (b < a) return {0, 0};
  return {static_cast<std::size_t>(a), static_cast<std::size_t>(b) + 1};
}

}  // namespace

std::vector<double> fit_window_polynomial(const TimeTrace& trace, const Window& window, int n) {
  const auto [first, end] = window_range(trace, window);
  std::vector<double> t, y;
  for (std::size_t i = first; i < end; ++i) {
    t.push_back(trace.time(i));
    y.push_back(trace.samples[i]);
  }
  if (t.size() < static_cast<std::size_t>(n) + 1)
    throw InvalidArgument("window [" + std::to_string(window.start_ps) + ", " + std::to_string(window.end_ps) +
                          "] ps holds " + std::to_string(t.size()) + " samples, degree " + std::to_string(n) +
                          " needs " + std::to_string(n + 1));
  return fit_polynomial(t, y, n, window.start_ps, window.end_ps);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> FeatureMatrix::selected() const {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) idx.push_back(j);
  return idx;
}

Matrix FeatureMatrix::selected_values() const { return values.select_cols(selected()); }

void FeatureMatrix::write_csv(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out.precision(17);
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  for (std::size_t i = 0; i < values.rows; ++i) {
    for (std::size_t j = 0; j < values.cols; ++j) out << (j ? "," : "") << values(i, j);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + file.string());
}

namespace {

Window shifted(const Window& w, double shift) { return {w.start_ps + shift, w.end_ps + shift}; }

double onset_or_throw(const Dataset& d, std::size_t i, const OnsetParams& onset) {
  try {
    return detect_onset(d.records[i].trace, onset);
  } catch (const Error& e) {
    throw PipelineError("features", "record " + std::to_string(i) + ": " + e.what());
  }
}

}  // namespace

FeatureMatrix build_feature_matrix(const Dataset& dataset, const WindowSpec& spec, const OnsetParams& onset) {
  spec.validate();
  FeatureMatrix fm;
  fm.names = spec.feature_names();
  fm.mask.assign(fm.names.size(), 1);
  fm.values = Matrix(dataset.size(), fm.names.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const double t_start = onset_or_throw(dataset, i, onset);
    const auto& trace = dataset.records[i].trace;
    auto row = fm.values.row(i);
    std::size_t col = 0;
    for (std::size_t w = 0; w < spec.windows.size(); ++w) {
      std::vector<double> c;
      try {
        c = fit_window_polynomial(trace, shifted(spec.windows[w], t_start - spec.reference_onset_ps), spec.orders[w]);
      } catch (const Error& e) {
        throw PipelineError("features", "record " + std::to_string(i) + ": " + e.what());
      }
      for (double v : c) row[col++] = v;
    }
    row[col++] = t_start;
    row[col++] = dataset.records[i].a;
  });
  return fm;
}

FeatureCache::FeatureCache(const Dataset& dataset, const WindowSpec& spec, int max_order, const OnsetParams& onset)
    : spec_(spec), max_order_(max_order) {
  spec.validate();
  if (max_order < 0 || max_order > 20) throw InvalidArgument("max_order must be in [0, 20]");
  const std::size_t n = dataset.size();
  const std::size_t w_count = spec.windows.size();
  onsets_.resize(n);
  humidity_ = dataset.humidity();
  blocks_.assign(w_count, {});
  for (auto& per_window : blocks_)
    for (int o = 0; o <= max_order; ++o) per_window.emplace_back(n, static_cast<std::size_t>(o) + 1);
  parallel_for(n, [&](std::size_t i) {
    onsets_[i] = onset_or_throw(dataset, i, onset);
    const auto& trace = dataset.records[i].trace;
    for (std::size_t w = 0; w < w_count; ++w) {
      const auto win = shifted(spec.windows[w], onsets_[i] - spec.reference_onset_ps);
      for (int o = 0; o <= max_order; ++o) {
        std::vector<double> c;
        try {
          c = fit_window_polynomial(trace, win, o);
        } catch (const Error& e) {
          throw PipelineError("features", "record " + std::to_string(i) + ": " + e.what());
        }
        std::copy(c.begin(), c.end(), blocks_[w][static_cast<std::size_t>(o)].row(i).begin());
      }
    }
  });
}

FeatureMatrix FeatureCache::assemble(std::span<const int> orders) const {
  if (orders.size() != blocks_.size()) throw InvalidArgument("one order per window required");
  WindowSpec spec = spec_;
  spec.orders.assign(orders.begin(), orders.end());
  for (int o : orders)
    if (o < 0 || o > max_order_) throw InvalidArgument("order outside the cached range");
  FeatureMatrix fm;
  fm.names = spec.feature_names();
  fm.mask.assign(fm.names.size(), 1);
  fm.values = Matrix(onsets_.size(), fm.names.size());
  for (std::size_t i = 0; i < onsets_.size(); ++i) {
    auto row = fm.values.row(i);
    std::size_t col = 0;
    for (std::size_t w = 0; w < blocks_.size(); ++w) {
      const auto src = blocks_[w][static_cast<std::size_t>(orders[w])].row(i);
      for (double v : src) row[col++] = v;
    }
    row[col++] = onsets_[i];
    row[col++] = humidity_[i];
  }
  return fm;
}

// ---------------------------------------------------------------------------

std::string OrderSearchResult::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "window,order,val_loss\n";
  for (const auto& [w, o, l] : table) os << w << ',' << o << ',' << l << '\n';
  return os.str();
}

OrderSearchResult grid_search_poly_order(const Dataset& train, const Dataset& val, const WindowSpec& spec,
                                         std::span<const int> order_range, const dtree::TreeParams& params,
                                         std::uint64_t seed, const OnsetParams& onset) {
  spec.validate();
  if (order_range.empty()) throw InvalidArgument("empty polynomial order range");
  for (int o : order_range)
    if (o < 0 || o > 20) throw InvalidArgument("polynomial orders must lie in [0, 20]");
  if (val.size() < 2) throw InvalidArgument("validation set needs at least 2 records");
  if (train.empty()) throw InvalidArgument("empty training set");
  int max_order = *std::max_element(order_range.begin(), order_range.end());
  for (int o : spec.orders) max_order = std::max(max_order, o);
  const FeatureCache ct(train, spec, max_order, onset);
  const FeatureCache cv(val, spec, max_order, onset);
  const auto yt = train.targets();
  const auto yv = val.targets();

  std::vector<int> range(order_range.begin(), order_range.end());
  std::sort(range.begin(), range.end());
  range.erase(std::unique(range.begin(), range.end()), range.end());

  OrderSearchResult res;
  res.orders = spec.orders;
  for (std::size_t w = 0; w < spec.windows.size(); ++w) {
    double best_loss = std::numeric_limits<double>::infinity();
    int best = range.front();
    for (int o : range) {
      auto orders = res.orders;
      orders[w] = o;
      const auto model = dtree::fit_bagged(ct.assemble(orders).values, yt, params, seed);
      const double loss = dtree::mse(model.predict(cv.assemble(orders).values), yv);
      res.table.emplace_back(static_cast<int>(w) + 1, o, loss);
      if (loss < best_loss) {
        best_loss = loss;
        best = o;
      }
    }
    res.orders[w] = best;
  }
  return res;
}

// ---------------------------------------------------------------------------

Importance permutation_importance(const Predictor& model, const Matrix& X_val, std::span<const double> y_val,
                                  int n_repeats, Rng& rng) {
  if (n_repeats < 1) throw InvalidArgument("n_repeats must be >= 1");
  if (X_val.rows != y_val.size() || X_val.rows == 0) throw InvalidArgument("validation X and y mismatch or empty");
  Importance imp;
  imp.baseline_loss = dtree::mse(model(X_val), y_val);
  imp.mean.assign(X_val.cols, 0.0);
  imp.stddev.assign(X_val.cols, 0.0);
  Matrix work = X_val;
  std::vector<double> column(X_val.rows);
  for (std::size_t f = 0; f < X_val.cols; ++f) {
    std::vector<double> deltas;
    for (int r = 0; r < n_repeats; ++r) {
      for (std::size_t i = 0; i < X_val.rows; ++i) column[i] = X_val(i, f);
      rng.shuffle(std::span<double>(column));
      for (std::size_t i = 0; i < X_val.rows; ++i) work(i, f) = column[i];
      deltas.push_back(dtree::mse(model(work), y_val) - imp.baseline_loss);
    }
    for (std::size_t i = 0; i < X_val.rows; ++i) work(i, f) = X_val(i, f);
    double m = 0.0;
    for (double d : deltas) m += d;
    m /= n_repeats;
    double v = 0.0;
    for (double d : deltas) v += (d - m) * (d - m);
    imp.mean[f] = m;
    imp.stddev[f] = n_repeats > 1 ? std::sqrt(v / (n_repeats - 1)) : 0.0;
  }
  return imp;
}

Importance permutation_importance(const dtree::TreeEnsemble& model, const Matrix& X_val,
                                  std::span<const double> y_val, int n_repeats, Rng& rng) {
  if (X_val.cols != model.n_features)
    throw InvalidArgument("importance: matrix has " + std::to_string(X_val.cols) + " columns, model expects " +
                          std::to_string(model.n_features));
  return permutation_importance([&](const Matrix& X) { return model.predict(X); }, X_val, y_val, n_repeats, rng);
}

RfeResult recursive_feature_elimination(const Matrix& X_train, std::span<const double> y_train, const Matrix& X_val,
                                        std::span<const double> y_val, const dtree::TreeParams& params,
                                        std::uint64_t seed, const RfeOptions& options,
                                        std::vector<char> initial_mask) {
  if (X_train.cols < 2) throw InvalidArgument("feature elimination needs at least 2 features");
  if (X_val.cols != X_train.cols) throw InvalidArgument("train and validation feature layouts differ");
  if (y_val.empty()) throw InvalidArgument("feature elimination needs validation data");
  std::vector<char> mask = initial_mask.empty() ? std::vector<char>(X_train.cols, 1) : std::move(initial_mask);
  if (mask.size() != X_train.cols) throw InvalidArgument("initial mask length differs from feature count");
  const std::size_t floor = std::max<std::size_t>(1, options.min_features);

  double mean = 0.0;
  for (double v : y_train) mean += v;
  mean /= static_cast<double>(y_train.size());
  const std::vector<double> constant(y_val.size(), mean);
  const double informative_below = (1.0 - options.min_r2) * dtree::mse(constant, y_val);

  Rng rng(seed);
  auto active = [&](const std::vector<char>& m) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < m.size(); ++j)
      if (m[j]) idx.push_back(j);
    return idx;
  };
  auto fit = [&](const std::vector<char>& m) {
    const auto cols = active(m);
    auto model = dtree::fit_bagged(X_train.select_cols(cols), y_train, params, seed);
    const double loss = dtree::mse(model.predict(X_val.select_cols(cols)), y_val);
    return std::make_pair(std::move(model), loss);
  };

  RfeResult res;
  auto [model, loss] = fit(mask);
  res.steps.push_back({mask, loss, -1});
  std::vector<char> best_mask;
  double best_loss = std::numeric_limits<double>::infinity();
  if (loss < informative_below) {
    best_mask = mask;
    best_loss = loss;
  }

  while (active(mask).size() > floor) {
    const auto cols = active(mask);
    const auto imp = permutation_importance(model, X_val.select_cols(cols), y_val, options.n_repeats, rng);
    std::size_t worst = 0;
    for (std::size_t j = 1; j < cols.size(); ++j)
      if (imp.mean[j] <= imp.mean[worst]) worst = j;
    auto next = mask;
    next[cols[worst]] = 0;
    auto [next_model, next_loss] = fit(next);
    const bool informative = loss < informative_below;
    if (informative && next_loss > loss * (1.0 + options.tolerance)) break;
    mask = std::move(next);
    model = std::move(next_model);
    loss = next_loss;
    res.steps.push_back({mask, loss, static_cast<int>(cols[worst])});
    if (loss < informative_below && loss < best_loss) {
      best_mask = mask;
      best_loss = loss;
    }
  }
  res.mask = best_mask.empty() ? mask : best_mask;
  return res;
}

}  // namespace thzleaf::features
