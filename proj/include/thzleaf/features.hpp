#pragma once

// Onset-aligned windowed polynomial features for the tree regressor.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <tuple>
#include <string>
#include <vector>

#include "thzleaf/core_data.hpp"
#include "thzleaf/dtree.hpp"
#include "thzleaf/matrix.hpp"
#include "thzleaf/rng.hpp"

namespace thzleaf::features {

struct Window {
  double start_ps;
  double end_ps;
  bool operator==(const Window&) const = default;
};

/// Windows are given on the time axis of a trace whose onset lies at
/// reference_onset_ps; for a trace with onset t_start every window is shifted
/// by t_start - reference_onset_ps.
struct WindowSpec {
  std::vector<Window> windows{{4.0, 7.0}, {7.0, 10.0}, {15.5, 18.5}, {18.5, 21.5}};
  std::vector<int> orders{11, 2, 4, 8};
  double reference_onset_ps = 4.0;

  void validate() const;
  std::size_t n_features() const;  // sum(order + 1) + 2
  std::vector<std::string> feature_names() const;
  bool operator==(const WindowSpec&) const = default;
};

struct OnsetParams {
  int interpolation_factor = 8;
  double slope_threshold = 0.05;  // per ps, on the peak-normalised trace
};

/// Band-limited interpolation by zero-padding the spectrum; returns
/// n * factor samples spaced dt / factor.
std::vector<double> interpolate_bandlimited(std::span<const double> x, int factor);

/// Onset of the main positive lobe. The trace is interpolated and normalised to
/// its maximum; starting from the maximum we walk back over the flat top and
/// then along the rising edge while the slope stays above the threshold. The
/// onset is the first sample of that rising run.
double detect_onset(const TimeTrace& trace, const OnsetParams& params = {});

/// Least-squares polynomial of degree n in u = (2 t - (lo + hi)) / (hi - lo)
/// through the points (t_i, y_i); coefficients c_0..c_n. Solved by Householder QR.
std::vector<double> fit_polynomial(std::span<const double> t, std::span<const double> y, int n, double lo, double hi);

/// Fit over the samples of `trace` with time in [start_ps, end_ps].
std::vector<double> fit_window_polynomial(const TimeTrace& trace, const Window& window, int n);

struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> names;
  std::vector<char> mask;  // 1 = selected

  std::size_t rows() const { return values.rows; }
  std::size_t cols() const { return values.cols; }
  std::vector<std::size_t> selected() const;
  /// Matrix restricted to the selected columns.
  Matrix selected_values() const;
  void write_csv(const std::filesystem::path& file) const;
};

/// Per-window coefficient blocks plus t_start and a, one row per record.
/// Records are processed in parallel; an onset failure names the record index.
FeatureMatrix build_feature_matrix(const Dataset& dataset, const WindowSpec& spec, const OnsetParams& onset = {});

/// Onsets and per-window coefficient blocks for every order in [0, max_order],
/// so that grid searches do not refit traces.
class FeatureCache {
 public:
  FeatureCache(const Dataset& dataset, const WindowSpec& spec, int max_order, const OnsetParams& onset = {});
  FeatureMatrix assemble(std::span<const int> orders) const;
  std::span<const double> onsets() const { return onsets_; }

 private:
  WindowSpec spec_;
  int max_order_;
  std::vector<double> onsets_;
  std::vector<double> humidity_;
  // blocks_[w][n] is an N x (n + 1) matrix.
  std::vector<std::vector<Matrix>> blocks_;
};

struct OrderSearchResult {
  std::vector<int> orders;
  /// (window, order, validation loss) for every evaluated configuration.
  std::vector<std::tuple<int, int, double>> table;
  std::string to_csv() const;
};

/// Greedy coordinate descent over windows 1..W, one pass: each window's order
/// is chosen from order_range (others fixed at their current value) by the
/// validation MSE of a bagged-tree model; ties go to the smaller order.
OrderSearchResult grid_search_poly_order(const Dataset& train, const Dataset& val, const WindowSpec& spec,
                                         std::span<const int> order_range, const dtree::TreeParams& params,
                                         std::uint64_t seed, const OnsetParams& onset = {});

using Predictor = std::function<std::vector<double>(const Matrix&)>;

struct Importance {
  std::vector<double> mean;
  std::vector<double> stddev;
  double baseline_loss = 0.0;
};

/// Increase of validation MSE when one column is permuted, averaged over
/// n_repeats permutations.
Importance permutation_importance(const Predictor& model, const Matrix& X_val, std::span<const double> y_val,
                                  int n_repeats, Rng& rng);
Importance permutation_importance(const dtree::TreeEnsemble& model, const Matrix& X_val,
                                  std::span<const double> y_val, int n_repeats, Rng& rng);

struct RfeOptions {
  double tolerance = 0.005;  // relative loss increase allowed per elimination
  /// A mask counts as informative when its validation loss is below
  /// (1 - min_r2) times the loss of the constant training-mean predictor.
  double min_r2 = 0.05;
  int n_repeats = 5;
  std::size_t min_features = 1;
};

struct RfeStep {
  std::vector<char> mask;
  double val_loss;
  int removed;  // feature removed to reach this mask, -1 for the initial one
};

struct RfeResult {
  std::vector<char> mask;
  std::vector<RfeStep> steps;
};

/// Recursive feature elimination ranked by permutation importance.
/// Each step removes the least important feature (ties: the higher column) and
/// refits. While the current mask is not informative, elimination continues
/// unconditionally; otherwise it continues while the validation loss grows by
/// less than `tolerance`. The returned mask is the informative visited mask
/// with the lowest validation loss, or the final mask if none is informative.
RfeResult recursive_feature_elimination(const Matrix& X_train, std::span<const double> y_train, const Matrix& X_val,
                                        std::span<const double> y_val, const dtree::TreeParams& params,
                                        std::uint64_t seed, const RfeOptions& options = {},
                                        std::vector<char> initial_mask = {});

}  // namespace thzleaf::features
