#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/fft.hpp"
#include "thzleaf/parallel.hpp"
#include "thzleaf/thz_sim.hpp"

using namespace thzleaf;
using namespace thzleaf::sim;

namespace {

cplx etalon(cplx n, double d_mm, double f) {
  const double k0 = 2.0 * std::numbers::pi * f / kSpeedOfLight;
  const cplx r = (1.0 - n) / (1.0 + n);
  const cplx ph = std::exp(cplx(0.0, 1.0) * k0 * n * d_mm);
  return (4.0 * n / ((1.0 + n) * (1.0 + n))) * ph / (1.0 - r * r * ph * ph);
}

std::size_t argmax(const TimeTrace& t) {
  return static_cast<std::size_t>(std::max_element(t.samples.begin(), t.samples.end()) - t.samples.begin());
}

}  // namespace

TEST_CASE("single slab matches the closed-form etalon") {
  for (const cplx n : {cplx(2.0, 0.0), cplx(1.53, 0.02), cplx(3.4, 0.4)}) {
    const LayerStack s{{Layer{0.2, ConstantIndex{n.real(), n.imag()}}}};
    double err = 0.0;
    for (int k = 1; k <= 512; ++k) {
      const double f = 3.0 * k / 512.0;
      err = std::max(err, std::abs(stack_transmission(s, f) - etalon(n, 0.2, f)));
    }
    CHECK(err < 1e-10);
  }
}

TEST_CASE("empty stack and zero-thickness layers are transparent") {
  CHECK(stack_transmission(LayerStack{}, 1.0) == cplx(1.0, 0.0));
  const LayerStack s{{Layer{0.0, DoubleDebyeWater{}}}};
  CHECK(std::abs(stack_transmission(s, 1.3) - cplx(1.0, 0.0)) < 1e-15);
}

TEST_CASE("water absorption at 1 THz lies in the 25 degC band") {
  const double alpha = power_absorption_per_cm(DoubleDebyeWater{}, 1.0);
  CHECK(alpha > 200.0);
  CHECK(alpha < 250.0);
  CHECK(power_absorption_per_cm(DoubleDebyeWater{}, 2.0) > alpha);
}

TEST_CASE("passive media have non-negative extinction") {
  for (double f : {0.1, 0.5, 1.0, 2.5}) {
    CHECK(refractive_index(DoubleDebyeWater{}, f).imag() >= 0.0);
    CHECK(refractive_index(EffectiveLeaf{}, f).imag() >= 0.0);
  }
}

TEST_CASE("vapour transmission is unity in dry air and dips at line centres") {
  const auto lines = default_vapor_lines();
  CHECK(vapor_transmission(0.9, 0.0, 0.5, lines) == cplx(1.0, 0.0));
  for (const auto& l : lines) {
    const double at = std::abs(vapor_transmission(l.center_thz, 10.0, 0.5, lines));
    const double left = std::abs(vapor_transmission(l.center_thz - 0.002, 10.0, 0.5, lines));
    const double right = std::abs(vapor_transmission(l.center_thz + 0.002, 10.0, 0.5, lines));
    CHECK(at < 1.0);
    CHECK(at <= left);
    CHECK(at <= right);
  }
}

TEST_CASE("reference pulse is single-cycle with the peak near its delay") {
  const PulseParams p;
  const auto t = synth_reference_pulse(760, 0.05, p);
  const auto i = argmax(t);
  CHECK(std::abs(t.time(i) - (p.center_ps - p.width_ps)) < 0.06);
  CHECK(*std::min_element(t.samples.begin(), t.samples.end()) < -0.9 * p.amplitude);
  // Spectral content spans 0.1 to 3 THz.
  std::vector<double> x = t.as_double();
  const auto spec = rfft(x, x.size());
  double peak = 0.0;
  for (const auto& v : spec) peak = std::max(peak, std::abs(v));
  const double df = 1.0 / (760 * 0.05);
  auto mag = [&](double f) { return std::abs(spec[static_cast<std::size_t>(std::lround(f / df))]) / peak; };
  CHECK(mag(0.1) > 1e-3);
  CHECK(mag(3.0) > 1e-3);
}

TEST_CASE("identity transfer returns the input") {
  const auto t = synth_reference_pulse(256, 0.05);
  const auto y = apply_transfer(t, [](double) { return cplx(1.0, 0.0); });
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(y.samples[i] - t.samples[i]) < 1e-5);
}

TEST_CASE("a water film delays and attenuates the pulse") {
  const auto pulse = synth_reference_pulse(760, 0.05);
  const LeafParams leaf;
  const auto lines = default_vapor_lines();
  const auto dry = propagate(pulse, leaf_stack(leaf, Orientation::TopSide), 9.0, 0.5, lines);
  const auto wet = propagate(pulse, wet_stack(leaf, Orientation::TopSide, 0.05), 9.0, 0.5, lines);
  CHECK(dry.samples[argmax(dry)] > wet.samples[argmax(wet)]);
  CHECK(argmax(wet) > argmax(dry));
}

TEST_CASE("droplet pattern conserves water") {
  DropletPattern p(150.0, 60.0);
  p.add_droplet(0.3);
  p.add_droplet(0.1);
  p.grow_droplet(0, 0.2);
  CHECK(p.water_mass_mg() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(p.coverage() <= 1.0);
  const auto cls = p.coverage_classes(4, 0.002);
  double vol = 0.0, frac = 0.0;
  for (const auto& c : cls) {
    vol += c.area_fraction * c.thickness_mm * p.beam_area_mm2();
    frac += c.area_fraction;
  }
  CHECK(vol == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(frac <= 1.0 + 1e-12);
  const auto d = p.droplet_from_volume(0.3);
  CHECK(DropletPattern::cap_volume(d.diameter_mm, d.cap_height_mm) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("a spray step adds about the increment") {
  DropletParams dp;
  DropletPattern p(150.0, dp.contact_angle_deg);
  Rng rng(5);
  double g = 0.0;
  for (int i = 0; i < 30; ++i) {
    const auto next = sample_pattern_step(p, rng, 0.2, dp);
    const double inc = next.water_mass_mg() - g;
    CHECK(inc > 0.2 * (1.0 - dp.deposition_loss_max) - 1e-12);
    CHECK(inc <= 0.2 + 1e-12);
    g = next.water_mass_mg();
    p = next;
  }
  CHECK(p.droplets().size() > 1);
}

TEST_CASE("generated series start dry and stay in range") {
  const auto& d = testing::small_dataset();
  REQUIRE(!d.empty());
  CHECK(d.series_ids().size() == 3);
  for (const auto& r : d.records) {
    CHECK(r.trace.size() == 760);
    CHECK(r.g_b >= 0.0);
    CHECK(r.g_b <= 25.0 + 1.0);
    CHECK(r.a >= 0.0);
    if (r.acq_index == 0) CHECK(r.g_b == 0.0);
  }
  CHECK(d.config_hash == testing::small_sim().hash());
}

TEST_CASE("dataset generation is seeded and independent of the thread count") {
  const auto c = testing::small_sim(2, 15, 3);
  set_thread_count(1);
  const auto a = generate_dataset(c);
  set_thread_count(4);
  const auto b = generate_dataset(c);
  set_thread_count(0);
  CHECK(a == b);
  auto c2 = c;
  c2.seed = 4;
  CHECK(generate_dataset(c2).content_hash() != a.content_hash());
}

TEST_CASE("bottom-side orientation is propagated to records") {
  auto c = testing::small_sim(1, 10, 2);
  c.orientation = Orientation::BottomSide;
  c.first_series_id = 100;
  const auto d = generate_dataset(c);
  for (const auto& r : d.records) {
    CHECK(r.orientation == Orientation::BottomSide);
    CHECK(r.series_id == 100);
  }
}

TEST_CASE("zero series gives an empty dataset") {
  auto c = testing::small_sim(0, 10);
  CHECK(generate_dataset(c).empty());
}

TEST_CASE("invalid configuration is rejected") {
  auto c = testing::small_sim();
  c.beam_area_mm2 = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("xi of a trace against itself is zero and std_trace is non-negative") {
  const auto& d = testing::small_dataset();
  const auto xi = xi_statistic(d.records[0].trace, d.records[0].trace);
  for (double v : xi) CHECK(v == 0.0);
  const auto s = std_trace(d);
  CHECK(s.size() == 760);
  CHECK(*std::min_element(s.begin(), s.end()) >= 0.0);
  CHECK(*std::max_element(s.begin(), s.end()) > 0.0);
}
