#pragma once

// CART regression trees and bootstrap-aggregated ensembles.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thzleaf/matrix.hpp"
#include "thzleaf/rng.hpp"

namespace thzleaf::dtree {

enum class Criterion { L2, L1 };

std::string to_string(Criterion c);
Criterion criterion_from_string(const std::string& s);

struct TreeParams {
  int max_depth = -1;  // negative: unbounded
  int min_samples_leaf = 5;
  Criterion criterion = Criterion::L2;
  int n_samples_per_tree = 2000;
  int n_trees = 100;
  int max_features = 0;  // 0: all features

  void validate() const;
  bool operator==(const TreeParams&) const = default;
};

/// Flat node; feature < 0 marks a leaf.
struct Node {
  int feature = -1;
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // mean target of the training samples reaching the node
  int count = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const Node&) const = default;
};

class Tree {
 public:
  std::vector<Node> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const;
  int depth() const;
  std::size_t leaf_count() const;
  /// Smallest training count over all leaves.
  int min_leaf_count() const;

  bool operator==(const Tree&) const = default;
};

/// Greedy best-first CART on the rows `sample` of X (all rows when empty;
/// repeated indices act as sample weights). Split candidates are midpoints of
/// consecutive distinct values; ties prefer the lower feature index, then the
/// lower threshold. A split is made only if it lowers the summed criterion.
Tree fit_tree(const Matrix& X, std::span<const double> y, const TreeParams& params, Rng& rng,
              std::span<const std::size_t> sample = {});

/// Summed child criterion for splitting `y` at the given threshold on column
/// `feature`; the reference used by tests.
double split_cost(const Matrix& X, std::span<const double> y, int feature, double threshold, Criterion c);

class TreeEnsemble {
 public:
  std::vector<Tree> trees;
  TreeParams params;
  std::size_t n_features = 0;
  std::vector<std::string> feature_names;
  std::uint64_t seed = 0;
  std::uint64_t data_hash = 0;

  double predict(std::span<const double> x) const;
  std::vector<double> predict(const Matrix& X) const;

  std::string to_json() const;
  static TreeEnsemble from_json(const std::string& text);
  void save(const std::filesystem::path& file) const;
  static TreeEnsemble load(const std::filesystem::path& file);

  bool operator==(const TreeEnsemble&) const = default;
};

/// n_trees trees, tree t trained on n_samples_per_tree rows drawn with
/// replacement from Rng(seed).substream(t). Trees are fitted in parallel.
TreeEnsemble fit_bagged(const Matrix& X, std::span<const double> y, const TreeParams& params, std::uint64_t seed);

/// Hash of a feature matrix and targets, stored as training provenance.
std::uint64_t training_hash(const Matrix& X, std::span<const double> y);

struct ParamGrid {
  std::vector<int> n_samples_per_tree{2000};
  std::vector<int> max_depth{8, 12, 16, -1};
  std::vector<int> max_features{0};
};

struct GridRow {
  TreeParams params;
  double cv_loss = 0.0;
};

struct GridSearchResult {
  TreeParams best;
  std::vector<GridRow> table;
  std::string to_csv() const;
};

/// Exhaustive search, mean k-fold validation MSE; ties go to the smaller depth
/// (unbounded counts as largest), then fewer samples per tree, then fewer features.
GridSearchResult grid_search_hyperparams(const Matrix& X, std::span<const double> y, const ParamGrid& grid,
                                         const TreeParams& base, std::size_t k, std::uint64_t seed);

double mse(std::span<const double> pred, std::span<const double> y);

}  // namespace thzleaf::dtree
