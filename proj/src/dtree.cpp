#include "thzleaf/dtree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

#include "json.hpp"
#include "thzleaf/core_data.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/hash.hpp"
#include "thzleaf/parallel.hpp"

namespace thzleaf::dtree {

using nlohmann::json;

std::string to_string(Criterion c) { return c == Criterion::L2 ? "l2" : "l1"; }

Criterion criterion_from_string(const std::string& s) {
  if (s == "l2" || s == "L2" || s == "squared_error") return Criterion::L2;
  if (s == "l1" || s == "L1" || s == "absolute_error") return Criterion::L1;
  throw InvalidArgument("unknown split criterion '" + s + "'");
}

void TreeParams::validate() const {
  if (min_samples_leaf < 1) throw InvalidArgument("min_samples_leaf must be >= 1");
  if (n_samples_per_tree < 1) throw InvalidArgument("n_samples_per_tree must be >= 1");
  if (n_trees < 1) throw InvalidArgument("n_trees must be >= 1");
  if (max_features < 0) throw InvalidArgument("max_features must be >= 0");
}

// ---------------------------------------------------------------------------

double Tree::predict(std::span<const double> x) const {
  if (nodes.empty()) throw InvalidArgument("predict on an empty tree");
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto f = static_cast<std::size_t>(nodes[i].feature);
    if (f >= x.size()) throw InvalidArgument("feature vector too short for tree");
    i = static_cast<std::size_t>(x[f] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  }
  return nodes[i].value;
}

int Tree::depth() const {
  if (nodes.empty()) return 0;
  std::function<int(int)> walk = [&](int i) -> int {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    return n.is_leaf() ? 0 : 1 + std::max(walk(n.left), walk(n.right));
  };
  return walk(0);
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_leaf(); }));
}

int Tree::min_leaf_count() const {
  int m = std::numeric_limits<int>::max();
  for (const auto& n : nodes)
    if (n.is_leaf()) m = std::min(m, n.count);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

// Sum of absolute deviations from the median for every prefix of `v`:
// out[p] = SAD(v[0..p)). Two heaps keep the running median.
std::vector<double> prefix_sad(std::span<const double> v) {
  std::vector<double> out(v.size() + 1, 0.0);
  std::priority_queue<double> low;                                           // max-heap
  std::priority_queue<double, std::vector<double>, std::greater<>> high;     // min-heap
  double sum_low = 0.0, sum_high = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (low.empty() || v[i] <= low.top()) {
      low.push(v[i]);
      sum_low += v[i];
    } else {
      high.push(v[i]);
      sum_high += v[i];
    }
    if (low.size() > high.size() + 1) {
      sum_high += low.top();
      sum_low -= low.top();
      high.push(low.top());
      low.pop();
    } else if (high.size() > low.size()) {
      sum_low += high.top();
      sum_high -= high.top();
      low.push(high.top());
      high.pop();
    }
    const double med = low.top();
    out[i + 1] = (med * static_cast<double>(low.size()) - sum_low) + (sum_high - med * static_cast<double>(high.size()));
  }
  return out;
}

double sad(std::vector<double> v) {
  if (v.empty()) return 0.0;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double med = *mid;
  double s = 0.0;
  for (double x : v) s += std::abs(x - med);
  return s;
}

double sse(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double cost = std::numeric_limits<double>::infinity();
};

class Builder {
 public:
  Builder(const Matrix& X, std::span<const double> y, const TreeParams& p, Rng& rng)
      : X_(X), y_(y), p_(p), rng_(rng) {}

  Tree build(std::vector<std::size_t> idx) {
    Tree t;
    grow(t, std::move(idx), 0);
    return t;
  }

 private:
  int grow(Tree& t, std::vector<std::size_t> idx, int depth) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    double mean = 0.0;
    for (auto i : idx) mean += y_[i];
    mean /= static_cast<double>(idx.size());
    t.nodes[static_cast<std::size_t>(id)].value = mean;
    t.nodes[static_cast<std::size_t>(id)].count = static_cast<int>(idx.size());

    const auto n = idx.size();
    const auto leaf = static_cast<std::size_t>(p_.min_samples_leaf);
    if ((p_.max_depth >= 0 && depth >= p_.max_depth) || n < 2 * leaf) return id;

    const Split s = best_split(idx, mean);
    if (s.feature < 0) return id;

    std::vector<std::size_t> left, right;
    left.reserve(n);
    right.reserve(n);
    for (auto i : idx) (X_(i, static_cast<std::size_t>(s.feature)) <= s.threshold ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = grow(t, std::move(left), depth + 1);
    const int r = grow(t, std::move(right), depth + 1);
    auto& node = t.nodes[static_cast<std::size_t>(id)];
    node.feature = s.feature;
    node.threshold = s.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  std::vector<int> candidate_features() {
    const int f = static_cast<int>(X_.cols);
    std::vector<int> all(static_cast<std::size_t>(f));
    std::iota(all.begin(), all.end(), 0);
    if (p_.max_features <= 0 || p_.max_features >= f) return all;
    // Partial Fisher-Yates, then ascending so ties still favour low indices.
    for (int i = 0; i < p_.max_features; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng_.below(static_cast<std::uint64_t>(f - i));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    all.resize(static_cast<std::size_t>(p_.max_features));
    std::sort(all.begin(), all.end());
    return all;
  }

  Split best_split(const std::vector<std::size_t>& idx, double mean) {
    const std::size_t n = idx.size();
    const auto leaf = static_cast<std::size_t>(p_.min_samples_leaf);
    std::vector<std::pair<double, double>> xy(n);
    std::vector<double> ys(n);

    double parent = 0.0;
    if (p_.criterion == Criterion::L2) {
      for (auto i : idx) parent += (y_[i] - mean) * (y_[i] - mean);
    } else {
      for (std::size_t k = 0; k < n; ++k) ys[k] = y_[idx[k]];
      parent = sad(ys);
    }
    if (!(parent > 0.0)) return {};

    Split best;
    const double tol = 1e-12 * parent;
    for (int f : candidate_features()) {
      const auto fu = static_cast<std::size_t>(f);
      for (std::size_t k = 0; k < n; ++k) xy[k] = {X_(idx[k], fu), y_[idx[k]] - mean};
      std::sort(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      if (xy.front().first == xy.back().first) continue;

      std::vector<double> left_cost(n + 1), right_cost(n + 1);
      if (p_.criterion == Criterion::L2) {
        double s = 0.0, total = 0.0;
        for (const auto& e : xy) total += e.second;
        for (std::size_t p = 1; p < n; ++p) {
          s += xy[p - 1].second;
          const double nl = static_cast<double>(p), nr = static_cast<double>(n - p);
          const double sr = total - s;
          left_cost[p] = -s * s / nl;  // constant parent term added below
          right_cost[p] = -sr * sr / nr;
        }
      } else {
        for (std::size_t k = 0; k < n; ++k) ys[k] = xy[k].second;
        const auto pre = prefix_sad(ys);
        std::reverse(ys.begin(), ys.end());
        const auto suf = prefix_sad(ys);
        for (std::size_t p = 1; p < n; ++p) {
          left_cost[p] = pre[p];
          right_cost[p] = suf[n - p];
        }
      }
      const double offset = p_.criterion == Criterion::L2 ? parent : 0.0;
      for (std::size_t p = leaf; p + leaf <= n; ++p) {
        if (xy[p - 1].first == xy[p].first) continue;
        const double cost = offset + left_cost[p] + right_cost[p];
        if (cost < best.cost - tol) {
          double thr = 0.5 * (xy[p - 1].first + xy[p].first);
          if (!(thr >= xy[p - 1].first && thr < xy[p].first)) thr = xy[p - 1].first;
          best = {f, thr, cost};
        }
      }
    }
    if (best.feature < 0 || !(best.cost < parent - tol)) return {};
    return best;
  }

  const Matrix& X_;
  std::span<const double> y_;
  const TreeParams& p_;
  Rng& rng_;
};

void check_xy(const Matrix& X, std::span<const double> y) {
  if (X.rows == 0) throw InvalidArgument("cannot fit a tree on an empty training set");
  if (y.size() != X.rows) throw InvalidArgument("X and y differ in length");
  for (double v : X.data)
    if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
  for (double v : y)
    if (!std::isfinite(v)) throw InvalidArgument("non-finite target value");
}

}  // namespace

Tree fit_tree(const Matrix& X, std::span<const double> y, const TreeParams& params, Rng& rng,
              std::span<const std::size_t> sample) {
  params.validate();
  check_xy(X, y);
  std::vector<std::size_t> idx;
  if (sample.empty()) {
    idx.resize(X.rows);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  } else {
    idx.assign(sample.begin(), sample.end());
    for (auto i : idx)
      if (i >= X.rows) throw InvalidArgument("sample index out of range");
  }
  return Builder(X, y, params, rng).build(std::move(idx));
}

double split_cost(const Matrix& X, std::span<const double> y, int feature, double threshold, Criterion c) {
  std::vector<double> l, r;
  for (std::size_t i = 0; i < X.rows; ++i)
    (X(i, static_cast<std::size_t>(feature)) <= threshold ? l : r).push_back(y[i]);
  if (c == Criterion::L2) return sse(l) + sse(r);
  return sad(l) + sad(r);
}

// ---------------------------------------------------------------------------

double TreeEnsemble::predict(std::span<const double> x) const {
  if (trees.empty()) throw InvalidArgument("predict on an empty ensemble");
  if (x.size() != n_features) throw InvalidArgument("feature vector has " + std::to_string(x.size()) +
                                                    " entries, ensemble expects " + std::to_string(n_features));
  // Neumaier summation keeps the mean exact to rounding of the final division.
  double sum = 0.0, comp = 0.0;
  for (const auto& t : trees) {
    const double v = t.predict(x);
    const double s = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - s) + v : (v - s) + sum;
    sum = s;
  }
  return (sum + comp) / static_cast<double>(trees.size());
}

std::vector<double> TreeEnsemble::predict(const Matrix& X) const {
  std::vector<double> out(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) out[i] = predict(X.row(i));
  return out;
}

namespace {

json params_to_json(const TreeParams& p) {
  return {{"max_depth", p.max_depth},
          {"min_samples_leaf", p.min_samples_leaf},
          {"criterion", to_string(p.criterion)},
          {"n_samples_per_tree", p.n_samples_per_tree},
          {"n_trees", p.n_trees},
          {"max_features", p.max_features}};
}

TreeParams params_from_json(const json& j) {
  TreeParams p;
  p.max_depth = j.at("max_depth").get<int>();
  p.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  p.criterion = criterion_from_string(j.at("criterion").get<std::string>());
  p.n_samples_per_tree = j.at("n_samples_per_tree").get<int>();
  p.n_trees = j.at("n_trees").get<int>();
  p.max_features = j.at("max_features").get<int>();
  return p;
}

constexpr const char* kFormat = "thzleaf-tree-ensemble";
constexpr int kVersion = 1;

}  // namespace

std::string TreeEnsemble::to_json() const {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["params"] = params_to_json(params);
  j["n_features"] = n_features;
  j["feature_names"] = feature_names;
  j["seed"] = seed;
  j["data_hash"] = hex64(data_hash);
  json arr = json::array();
  for (const auto& t : trees) {
    json jt;
    std::vector<int> feature, left, right, count;
    std::vector<double> threshold, value;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
      count.push_back(n.count);
    }
    jt["feature"] = feature;
    jt["threshold"] = threshold;
    jt["left"] = left;
    jt["right"] = right;
    jt["value"] = value;
    jt["count"] = count;
    arr.push_back(std::move(jt));
  }
  j["trees"] = std::move(arr);
  return j.dump(1);
}

TreeEnsemble TreeEnsemble::from_json(const std::string& text) {
  TreeEnsemble e;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kFormat) throw FormatError("not a tree-ensemble file");
    if (j.at("version").get<int>() != kVersion)
      throw FormatError("unsupported tree-ensemble schema version " + std::to_string(j.at("version").get<int>()));
    e.params = params_from_json(j.at("params"));
    e.n_features = j.at("n_features").get<std::size_t>();
    e.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.data_hash = parse_hex64(j.at("data_hash").get<std::string>());
    for (const auto& jt : j.at("trees")) {
      const auto feature = jt.at("feature").get<std::vector<int>>();
      const auto threshold = jt.at("threshold").get<std::vector<double>>();
      const auto left = jt.at("left").get<std::vector<int>>();
      const auto right = jt.at("right").get<std::vector<int>>();
      const auto value = jt.at("value").get<std::vector<double>>();
      const auto count = jt.at("count").get<std::vector<int>>();
      const auto n = feature.size();
      if (threshold.size() != n || left.size() != n || right.size() != n || value.size() != n || count.size() != n)
        throw FormatError("tree arrays differ in length");
      Tree t;
      for (std::size_t i = 0; i < n; ++i) {
        if (feature[i] >= 0) {
          if (feature[i] >= static_cast<int>(e.n_features) || left[i] <= static_cast<int>(i) ||
              right[i] <= static_cast<int>(i) || left[i] >= static_cast<int>(n) || right[i] >= static_cast<int>(n))
            throw FormatError("tree node " + std::to_string(i) + " has invalid links");
        }
        t.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i], count[i]});
      }
      if (t.nodes.empty()) throw FormatError("empty tree");
      e.trees.push_back(std::move(t));
    }
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed tree-ensemble JSON: ") + ex.what());
  }
  return e;
}

void TreeEnsemble::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << to_json() << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

TreeEnsemble TreeEnsemble::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------

TreeEnsemble fit_bagged(const Matrix& X, std::span<const double> y, const TreeParams& params, std::uint64_t seed) {
  params.validate();
  check_xy(X, y);
  TreeEnsemble e;
  e.params = params;
  e.n_features = X.cols;
  e.seed = seed;
  e.data_hash = training_hash(X, y);
  e.trees.resize(static_cast<std::size_t>(params.n_trees));
  const Rng master(seed);
  parallel_for(e.trees.size(), [&](std::size_t t) {
    Rng rng = master.substream(t);
    std::vector<std::size_t> sample(static_cast<std::size_t>(params.n_samples_per_tree));
    for (auto& s : sample) s = static_cast<std::size_t>(rng.below(X.rows));
    e.trees[t] = fit_tree(X, y, params, rng, sample);
  });
  return e;
}

std::uint64_t training_hash(const Matrix& X, std::span<const double> y) {
  Fnv1a h;
  h.u64(X.rows);
  h.u64(X.cols);
  for (double v : X.data) h.f64(v);
  for (double v : y) h.f64(v);
  return h.value();
}

double mse(std::span<const double> pred, std::span<const double> y) {
  if (pred.size() != y.size() || y.empty()) throw InvalidArgument("mse: length mismatch or empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return s / static_cast<double>(y.size());
}

std::string GridSearchResult::to_csv() const {
  std::ostringstream os;
  os << "n_samples_per_tree,max_depth,max_features,cv_loss\n";
  os.precision(17);
  for (const auto& r : table)
    os << r.params.n_samples_per_tree << ',' << r.params.max_depth << ',' << r.params.max_features << ','
       << r.cv_loss << '\n';
  return os.str();
}

GridSearchResult grid_search_hyperparams(const Matrix& X, std::span<const double> y, const ParamGrid& grid,
                                         const TreeParams& base, std::size_t k, std::uint64_t seed) {
  if (grid.n_samples_per_tree.empty() || grid.max_depth.empty() || grid.max_features.empty())
    throw InvalidArgument("hyperparameter grid is empty");
  check_xy(X, y);
  const auto folds = kfold_indices(X.rows, k, seed);
  GridSearchResult res;
  for (int ns : grid.n_samples_per_tree)
    for (int md : grid.max_depth)
      for (int mf : grid.max_features) {
        TreeParams p = base;
        p.n_samples_per_tree = ns;
        p.max_depth = md;
        p.max_features = mf;
        double loss = 0.0;
        for (std::size_t f = 0; f < folds.size(); ++f) {
          std::vector<std::size_t> train;
          for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
          std::sort(train.begin(), train.end());
          const auto Xt = X.select_rows(train);
          std::vector<double> yt;
          for (auto i : train) yt.push_back(y[i]);
          const auto model = fit_bagged(Xt, yt, p, Rng::derive_seed(seed, f));
          const auto Xv = X.select_rows(folds[f]);
          std::vector<double> yv;
          for (auto i : folds[f]) yv.push_back(y[i]);
          loss += mse(model.predict(Xv), yv);
        }
        res.table.push_back({p, loss / static_cast<double>(folds.size())});
      }
  auto depth_key = [](int d) { return d < 0 ? std::numeric_limits<int>::max() : d; };
  const GridRow* best = &res.table.front();
  for (const auto& r : res.table) {
    const double tol = 1e-12 * std::abs(best->cv_loss);
    if (r.cv_loss < best->cv_loss - tol) {
      best = &r;
    } else if (std::abs(r.cv_loss - best->cv_loss) <= tol) {
      const auto a = std::make_tuple(depth_key(r.params.max_depth), r.params.n_samples_per_tree, r.params.max_features);
      const auto b = std::make_tuple(depth_key(best->params.max_depth), best->params.n_samples_per_tree,
                                     best->params.max_features);
      if (a < b) best = &r;
    }
  }
  res.best = best->params;
  return res;
}

}  // namespace thzleaf::dtree
