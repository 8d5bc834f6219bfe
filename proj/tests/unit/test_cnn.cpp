#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "thzleaf/cnn.hpp"
#include "thzleaf/errors.hpp"

using namespace thzleaf;
using namespace thzleaf::cnn;

TEST_CASE("default shape chain") {
  const Architecture a;
  const std::vector<std::size_t> expected{760, 380, 190, 95, 47, 23, 11};
  CHECK(a.shape_chain() == expected);
  CHECK(a.flatten_size() == 64 * 11);
  CHECK(a.head_input_size() == 705);
}

TEST_CASE("parameter counts") {
  const auto c = count_parameters(Architecture{});
  CHECK(c.regression_part == 46241);
  CHECK(c.feature_part == 21024);
  CHECK(c.total == c.feature_part + c.regression_part);
  const Network<float> net{Architecture{}};
  CHECK(net.params.size() == c.total);
}

TEST_CASE("gradient check on a shrunken network") {
  const auto r = oracle::cnn_gradient_check();
  CHECK(r.relative_error < 1e-4);
}

TEST_CASE("layer kernels") {
  // conv with a centred delta kernel is the identity
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> w{0, 1, 0}, b{0.5};
  std::vector<double> y(4);
  conv1d_forward(x.data(), 1, 4, w.data(), b.data(), 1, 3, y.data());
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == x[i] + 0.5);
  // pooling drops an odd tail and prefers the earlier index on ties
  const std::vector<double> p{1, 3, 2, 2, 9};
  std::vector<double> q(2);
  std::vector<int> arg(2);
  maxpool_forward(p.data(), 1, 5, q.data(), arg.data());
  CHECK(q == std::vector<double>{3, 2});
  CHECK(arg == std::vector<int>{1, 2});
}

TEST_CASE("batch norm normalises in training mode") {
  std::vector<double> x{1, 2, 3, 4, 5, 6};  // batch 3, one channel, length 2
  const double gamma = 1.0, beta = 0.0;
  double rm = 0.0, rv = 1.0;
  std::vector<double> xhat(6), inv(1);
  batchnorm_forward(x.data(), 3, 1, 2, &gamma, &beta, &rm, &rv, true, BatchNormConfig{}, xhat.data(), inv.data());
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v / 6.0;
  for (double v : x) var += (v - mean) * (v - mean) / 6.0;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(rm == doctest::Approx(0.35));
}

TEST_CASE("adam minimises a quadratic") {
  std::vector<double> p{5.0, -3.0};
  AdamState<double> st;
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> g{2.0 * p[0], 2.0 * p[1]};
    adam_step<double>(p, g, st, cfg);
  }
  CHECK(std::abs(p[0]) < 1e-2);
  CHECK(std::abs(p[1]) < 1e-2);
  CHECK(st.t == 500);
}

TEST_CASE("input normalisation") {
  const std::vector<double> a{8.0, 9.0, 10.0};
  const auto n = InputNorm::fit(a);
  CHECK(n.mu_a == doctest::Approx(9.0));
  CHECK(n.humidity(9.0) == 0.0);
  const std::vector<double> same{9.0, 9.0};
  const auto m = InputNorm::fit(same);
  CHECK(m.sigma_defaulted);
  CHECK(m.sigma_a == 1.0);
}

TEST_CASE("training is seeded, one epoch gives one history row, and models round-trip") {
  const auto& d = testing::small_dataset();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  const auto a = train(d, Architecture{}, cfg);
  const auto b = train(d, Architecture{}, cfg);
  CHECK(a.history.size() == 1);
  CHECK(a.final_model.net.params == b.final_model.net.params);
  CHECK(history_csv(a.history).rfind("epoch,train_loss,val_loss", 0) == 0);

  testing::TempDir tmp("cnn");
  auto m = a.best_model;
  m.save(tmp.path / "model.json", tmp.path / "weights.f32");
  auto back = CnnModel::load(tmp.path / "model.json", tmp.path / "weights.f32");
  CHECK(back.net.params == m.net.params);
  CHECK(back.net.running == m.net.running);
  CHECK(back.predict(d) == m.predict(d));
  const auto act = m.layer_activations(d.records[0].trace, d.records[0].a);
  REQUIRE(act.size() == 6);
  const auto chain = Architecture{}.shape_chain();
  for (std::size_t b = 0; b < 6; ++b) CHECK(act[b].size() == chain[b]);
}

TEST_CASE("wrong input length is rejected") {
  CnnModel m;
  m.net = Network<float>(Architecture{});
  m.net.init(1);
  TimeTrace t;
  t.samples.resize(100);
  CHECK_THROWS_AS(m.predict(t, 9.0), InvalidArgument);
}
