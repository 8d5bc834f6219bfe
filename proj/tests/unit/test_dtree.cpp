#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "thzleaf/dtree.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/parallel.hpp"

using namespace thzleaf;
using namespace thzleaf::dtree;

namespace {

std::pair<Matrix, std::vector<double>> random_instance(Rng& rng, std::size_t n, std::size_t p) {
  Matrix X(n, p);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform(-1.0, 1.0);
    y[i] = (X(i, 0) > 0.2 ? 2.0 : -1.0) + std::sin(3.0 * X(i, p - 1)) + 0.3 * rng.normal();
  }
  return {X, y};
}

void check_leaves(const Tree& t, int min_leaf) {
  for (const auto& n : t.nodes)
    if (n.is_leaf()) CHECK(n.count >= min_leaf);
}

}  // namespace

TEST_CASE("root split equals the exhaustive optimum") {
  Rng rng(101);
  for (const auto crit : {Criterion::L2, Criterion::L1}) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 10 + rng.below(191), p = 1 + rng.below(3);
      const auto [X, y] = random_instance(rng, n, p);
      TreeParams params;
      params.criterion = crit;
      Rng fit_rng(1);
      const Tree t = fit_tree(X, y, params, fit_rng);
      const auto best = oracle::brute_force_root(X, y, params.min_samples_leaf, crit);
      if (best.feature < 0) {
        CHECK(t.nodes.size() == 1);
        continue;
      }
      REQUIRE(!t.nodes[0].is_leaf());
      CHECK(t.nodes[0].feature == best.feature);
      CHECK(t.nodes[0].threshold == best.threshold);
      check_leaves(t, params.min_samples_leaf);
    }
  }
}

TEST_CASE("tiny node sets stay leaves") {
  Matrix X(8, 1);
  for (std::size_t i = 0; i < 8; ++i) X(i, 0) = static_cast<double>(i + 1);
  const std::vector<double> y{0, 0, 0, 0, 1, 1, 1, 1};
  Rng rng(0);
  const auto t = fit_tree(X, y, TreeParams{}, rng);
  CHECK(t.nodes.size() == 1);
  CHECK(t.nodes[0].value == doctest::Approx(0.5));
}

TEST_CASE("depth limit and leaf size are honoured") {
  Rng rng(3);
  const auto [X, y] = random_instance(rng, 400, 3);
  TreeParams p;
  p.max_depth = 3;
  Rng fr(1);
  const auto t = fit_tree(X, y, p, fr);
  CHECK(t.depth() <= 3);
  check_leaves(t, 5);
  CHECK(t.min_leaf_count() >= 5);
}

TEST_CASE("a step function is learned exactly") {
  Matrix X(100, 1);
  std::vector<double> y(100);
  for (std::size_t i = 0; i < 100; ++i) {
    X(i, 0) = static_cast<double>(i);
    y[i] = i < 40 ? 1.0 : 5.0;
  }
  Rng rng(0);
  const auto t = fit_tree(X, y, TreeParams{}, rng);
  CHECK(t.nodes[0].threshold == 39.5);
  const std::vector<double> lo{10.0}, hi{70.0};
  CHECK(t.predict(lo) == 1.0);
  CHECK(t.predict(hi) == 5.0);
}

TEST_CASE("bagged ensemble is seeded and thread-count independent") {
  Rng rng(8);
  const auto [X, y] = random_instance(rng, 300, 3);
  TreeParams p;
  p.n_trees = 12;
  p.n_samples_per_tree = 200;
  set_thread_count(1);
  const auto a = fit_bagged(X, y, p, 77);
  set_thread_count(3);
  const auto b = fit_bagged(X, y, p, 77);
  set_thread_count(0);
  CHECK(a == b);
  CHECK(a.trees.size() == 12);
  CHECK(!(fit_bagged(X, y, p, 78) == a));
  for (const auto& t : a.trees) CHECK(t.min_leaf_count() >= 5);
}

TEST_CASE("ensemble JSON round-trips exactly") {
  Rng rng(9);
  const auto [X, y] = random_instance(rng, 150, 2);
  TreeParams p;
  p.n_trees = 4;
  p.n_samples_per_tree = 150;
  p.criterion = Criterion::L1;
  auto e = fit_bagged(X, y, p, 5);
  e.feature_names = {"x0", "x1"};
  const auto back = TreeEnsemble::from_json(e.to_json());
  CHECK(back == e);
  CHECK(back.predict(X) == e.predict(X));
  CHECK_THROWS_AS(TreeEnsemble::from_json("{\"format\":\"other\"}"), FormatError);
}

TEST_CASE("prediction checks the feature count") {
  Rng rng(1);
  const auto [X, y] = random_instance(rng, 60, 2);
  TreeParams p;
  p.n_trees = 2;
  p.n_samples_per_tree = 60;
  const auto e = fit_bagged(X, y, p, 1);
  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(e.predict(bad), InvalidArgument);
}

TEST_CASE("grid search picks the sane configuration") {
  Matrix X(300, 1);
  std::vector<double> y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    X(i, 0) = static_cast<double>(i) / 300.0;
    y[i] = X(i, 0) < 0.5 ? 0.0 : 10.0;
  }
  ParamGrid grid;
  grid.n_samples_per_tree = {300};
  grid.max_depth = {0, 4};
  TreeParams base;
  base.n_trees = 3;
  const auto r = grid_search_hyperparams(X, y, grid, base, 5, 2);
  CHECK(r.best.max_depth == 4);
  CHECK(r.table.size() == 2);
  grid.max_depth = {6};
  CHECK(grid_search_hyperparams(X, y, grid, base, 5, 2).best.max_depth == 6);
}

TEST_CASE("invalid parameters are rejected") {
  TreeParams p;
  p.min_samples_leaf = 0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p = TreeParams{};
  p.n_trees = 0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  CHECK(criterion_from_string(to_string(Criterion::L1)) == Criterion::L1);
}
