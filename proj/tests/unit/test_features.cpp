#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/features.hpp"

using namespace thzleaf;
using namespace thzleaf::features;

TEST_CASE("polynomial fit matches the extended-precision oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = static_cast<int>(rng.below(21));
    const double lo = rng.uniform(0.0, 30.0), hi = lo + rng.uniform(2.5, 4.0);
    std::vector<double> t, y;
    for (double x = lo; x <= hi; x += 0.05) {
      t.push_back(x);
      y.push_back(std::sin(1.3 * x) + 0.2 * std::cos(7.0 * x) + 0.01 * rng.normal());
    }
    const auto c = fit_polynomial(t, y, n, lo, hi);
    const auto ref = oracle::poly_fit(t, y, n, lo, hi);
    REQUIRE(c.size() == static_cast<std::size_t>(n + 1));
    CHECK(oracle::relative_error(c, ref) < 1e-8);
  }
}

TEST_CASE("exact polynomials are recovered") {
  std::vector<double> t, y;
  for (int i = 0; i <= 60; ++i) {
    const double x = 4.0 + 0.05 * i;
    const double u = (2.0 * x - 11.0) / 3.0;
    t.push_back(x);
    y.push_back(1.0 - 2.0 * u + 0.5 * u * u * u);
  }
  const auto c = fit_polynomial(t, y, 3, 4.0, 7.0);
  CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(std::abs(c[2]) < 1e-12);
  CHECK(c[3] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("underdetermined and degenerate fits are rejected") {
  const std::vector<double> t{1.0, 2.0}, y{0.0, 1.0};
  CHECK_THROWS_AS(fit_polynomial(t, y, 2, 1.0, 2.0), InvalidArgument);
  const std::vector<double> t3{1.0, 1.0, 1.0}, y3{0.0, 1.0, 2.0};
  CHECK_THROWS_AS(fit_polynomial(t3, y3, 1, 0.0, 2.0), NumericError);
}

TEST_CASE("band-limited interpolation passes through the original samples") {
  std::vector<double> x(64);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.3 * static_cast<double>(i));
  const auto y = interpolate_bandlimited(x, 8);
  REQUIRE(y.size() == 512);
  for (std::size_t i = 0; i < x.size(); i += 7) CHECK(y[8 * i] == doctest::Approx(x[i]).epsilon(1e-9));
}

TEST_CASE("onset of a step lies within two samples of the edge") {
  std::vector<double> v(200, 0.0);
  for (std::size_t i = 80; i < v.size(); ++i) v[i] = 1.0;
  const auto t = TimeTrace::from_double(v, 0.05, 0.0);
  const double onset = detect_onset(t);
  CHECK(std::abs(onset - 80 * 0.05) <= 2 * 0.05);
}

TEST_CASE("flat trace has no onset") {
  std::vector<double> v(128, 1.0);
  CHECK_THROWS(detect_onset(TimeTrace::from_double(v, 0.05, 0.0)));
}

TEST_CASE("onsets of synthetic traces sit before the main peak") {
  const auto& d = testing::small_dataset();
  for (std::size_t i = 0; i < d.size(); i += 13) {
    const auto& tr = d.records[i].trace;
    const double onset = detect_onset(tr);
    const auto peak = std::max_element(tr.samples.begin(), tr.samples.end()) - tr.samples.begin();
    CHECK(onset < tr.time(static_cast<std::size_t>(peak)));
    CHECK(onset > 3.0);
    CHECK(onset < 6.0);
  }
}

TEST_CASE("feature matrix layout follows the window spec") {
  const WindowSpec spec;
  CHECK(spec.n_features() == 31);
  const auto names = spec.feature_names();
  CHECK(names.front() == "w1:c0");
  CHECK(names[names.size() - 2] == "t_start");
  CHECK(names.back() == "a");
  const auto& d = testing::small_dataset();
  const auto fm = build_feature_matrix(d, spec);
  CHECK(fm.rows() == d.size());
  CHECK(fm.cols() == 31);
  CHECK(fm.names == names);
  for (std::size_t i = 0; i < d.size(); i += 17) {
    CHECK(fm.values(i, 30) == d.records[i].a);
    CHECK(fm.values(i, 29) == detect_onset(d.records[i].trace));
  }
}

TEST_CASE("feature cache reproduces direct extraction") {
  const auto& d = testing::small_dataset();
  const Dataset sub = d.subset(std::vector<std::size_t>{0, 5, 40, 77});
  WindowSpec spec;
  spec.orders = {3, 0, 5, 2};
  const FeatureCache cache(sub, spec, 6);
  const auto a = cache.assemble(spec.orders);
  const auto b = build_feature_matrix(sub, spec);
  CHECK(a.values == b.values);
  CHECK(a.names == b.names);
}

TEST_CASE("window specs are validated") {
  WindowSpec s;
  s.orders.pop_back();
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = WindowSpec{};
  s.windows[1] = {8.0, 7.5};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = WindowSpec{};
  s.orders[0] = 21;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("order search stays in range and logs every candidate") {
  const auto& d = testing::small_dataset();
  const auto split = split_random_indices(d.size(), 0.2, 1);
  dtree::TreeParams p;
  p.n_trees = 5;
  p.n_samples_per_tree = 80;
  const std::vector<int> range{0, 1, 2};
  const auto r = grid_search_poly_order(d.subset(split.train), d.subset(split.test), WindowSpec{}, range, p, 3);
  CHECK(r.orders.size() == 4);
  for (int o : r.orders) CHECK((o >= 0 && o <= 2));
  CHECK(r.table.size() == 12);
  CHECK(r.to_csv().rfind("window,order,val_loss", 0) == 0);
}

TEST_CASE("permutation importance ignores unused columns") {
  Matrix X(200, 3);
  std::vector<double> y(200);
  Rng rng(2);
  for (std::size_t i = 0; i < 200; ++i) {
    for (std::size_t j = 0; j < 3; ++j) X(i, j) = rng.normal();
    y[i] = 3.0 * X(i, 0);
  }
  const Predictor model = [](const Matrix& m) {
    std::vector<double> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) out[i] = 3.0 * m(i, 0);
    return out;
  };
  Rng prng(9);
  const auto imp = permutation_importance(model, X, y, 5, prng);
  CHECK(imp.baseline_loss == 0.0);
  CHECK(imp.mean[0] > 1.0);
  CHECK(imp.mean[1] == 0.0);
  CHECK(imp.mean[2] == 0.0);
}

TEST_CASE("feature elimination keeps the informative column") {
  Rng rng(4);
  auto make = [&](std::size_t n) {
    Matrix X(n, 5);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 5; ++j) X(i, j) = rng.uniform();
      y[i] = 10.0 * X(i, 2);
    }
    return std::pair{X, y};
  };
  const auto [Xt, yt] = make(300);
  const auto [Xv, yv] = make(100);
  dtree::TreeParams p;
  p.n_trees = 10;
  p.n_samples_per_tree = 300;
  const auto r = recursive_feature_elimination(Xt, yt, Xv, yv, p, 5);
  CHECK(r.mask[2] == 1);
  REQUIRE(!r.steps.empty());
  CHECK(r.steps.front().removed == -1);
  // The returned mask is the visited one with the lowest validation loss.
  double best = r.steps.front().val_loss, chosen = -1.0;
  for (const auto& s : r.steps) {
    best = std::min(best, s.val_loss);
    if (s.mask == r.mask) chosen = s.val_loss;
  }
  CHECK(chosen == best);
}
