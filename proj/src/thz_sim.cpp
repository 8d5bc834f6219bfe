#include "thzleaf/thz_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "thzleaf/errors.hpp"
#include "thzleaf/fft.hpp"
#include "thzleaf/hash.hpp"
#include "thzleaf/parallel.hpp"

namespace thzleaf::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

cplx debye(const DoubleDebyeWater& w, double f) {
  const double omega = kTwoPi * f;
  const cplx i{0.0, 1.0};
  return w.eps_inf + (w.eps_static - w.eps_mid) / (1.0 - i * omega * w.tau_slow_ps) +
         (w.eps_mid - w.eps_inf) / (1.0 - i * omega * w.tau_fast_ps);
}

DielectricModel leaf_layer(const LeafParams& leaf, double water_fraction) {
  return EffectiveLeaf{std::clamp(water_fraction, 0.0, 1.0), leaf.eps_dry, leaf.water};
}

}  // namespace

// ---------------------------------------------------------------------------

cplx permittivity(const DielectricModel& model, double f_thz) {
  return std::visit(
      [f_thz](const auto& m) -> cplx {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, DoubleDebyeWater>) {
          return debye(m, f_thz);
        } else if constexpr (std::is_same_v<T, EffectiveLeaf>) {
          return m.water_volume_fraction * debye(m.water, f_thz) + (1.0 - m.water_volume_fraction) * m.eps_dry;
        } else {
          const cplx n{m.n, m.kappa};
          return n * n;
        }
      },
      model);
}

cplx refractive_index(const DielectricModel& model, double f_thz) {
  if (const auto* c = std::get_if<ConstantIndex>(&model)) return {c->n, c->kappa};
  return std::sqrt(permittivity(model, f_thz));
}

double power_absorption_per_cm(const DielectricModel& model, double f_thz) {
  const double k0_per_mm = kTwoPi * f_thz / kSpeedOfLight;
  return 2.0 * k0_per_mm * refractive_index(model, f_thz).imag() * 10.0;
}

// ---------------------------------------------------------------------------

cplx transmission_from_indices(std::span<const cplx> indices, std::span<const double> thickness_mm, double f_thz) {
  if (indices.size() != thickness_mm.size()) throw InvalidArgument("indices / thickness size mismatch");
  const double k0 = kTwoPi * f_thz / kSpeedOfLight;
  // Amplitude-basis transfer matrix, propagation matrices scaled by exp(i delta)
  // so that only decaying exponentials appear.
  cplx t11{1.0}, t12{0.0}, t21{0.0}, t22{1.0};
  cplx scale{1.0};
  cplx left{1.0};
  auto interface = [&](cplx right) {
    const cplx sum = left + right;
    const cplx r = (left - right) / sum;
    const cplx inv_t = sum / (2.0 * left);
    const cplx n11 = (t11 + t12 * r) * inv_t;
    const cplx n12 = (t11 * r + t12) * inv_t;
    const cplx n21 = (t21 + t22 * r) * inv_t;
    const cplx n22 = (t21 * r + t22) * inv_t;
    t11 = n11;
    t12 = n12;
    t21 = n21;
    t22 = n22;
    left = right;
  };
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (thickness_mm[j] == 0.0) continue;
    if (thickness_mm[j] < 0.0) throw InvalidArgument("negative layer thickness");
    interface(indices[j]);
    const cplx phase = std::exp(cplx{0.0, 1.0} * k0 * indices[j] * thickness_mm[j]);
    scale *= phase;
    const cplx p2 = phase * phase;
    t12 *= p2;
    t22 *= p2;
  }
  interface(cplx{1.0});
  return scale / t11;
}

cplx stack_transmission(const LayerStack& stack, double f_thz) {
  std::vector<cplx> n;
  std::vector<double> d;
  n.reserve(stack.layers.size());
  d.reserve(stack.layers.size());
  for (const auto& layer : stack.layers) {
    n.push_back(refractive_index(layer.material, f_thz));
    d.push_back(layer.thickness_mm);
  }
  return transmission_from_indices(n, d, f_thz);
}

// ---------------------------------------------------------------------------

std::vector<VaporLine> default_vapor_lines() {
  // Effective widths include the instrument's spectral resolution.
  return {
      {0.557, 0.08, 0.012}, {0.752, 0.06, 0.012}, {0.988, 0.05, 0.012}, {1.097, 0.10, 0.012},
      {1.163, 0.09, 0.012}, {1.229, 0.04, 0.012}, {1.411, 0.06, 0.012}, {1.670, 0.10, 0.012},
  };
}

cplx vapor_transmission(double f_thz, double a, double path_len_m, std::span<const VaporLine> lines) {
  if (a < 0.0) throw InvalidArgument("humidity must be non-negative");
  if (a == 0.0 || path_len_m == 0.0) return {1.0, 0.0};
  const cplx i{0.0, 1.0};
  cplx depth{0.0};
  for (const auto& l : lines) {
    const double g = l.half_width_thz;
    // Poles at +-f_j - i g: analytic in the upper half plane, chi(-f) = conj(chi(f)).
    const cplx chi = 0.5 * g * (1.0 / (l.center_thz - f_thz - i * g) + 1.0 / (l.center_thz + f_thz + i * g));
    depth += l.strength * (-2.0 * i * (f_thz / l.center_thz) * chi);
  }
  return std::exp(-a * path_len_m * depth);
}

// ---------------------------------------------------------------------------

TimeTrace synth_reference_pulse(std::size_t n_t, double dt, const PulseParams& params, double t0) {
  if (n_t < 64) throw InvalidArgument("reference pulse needs n_t >= 64");
  if (!(dt > 0.0) || !(params.width_ps > 0.0)) throw InvalidArgument("dt and pulse width must be positive");
  std::vector<double> v(n_t);
  for (std::size_t k = 0; k < n_t; ++k) {
    const double x = (t0 + dt * static_cast<double>(k) - params.center_ps) / params.width_ps;
    v[k] = -params.amplitude * x * std::exp(0.5 * (1.0 - x * x));
  }
  return TimeTrace::from_double(v, dt, t0);
}

TimeTrace apply_transfer(const TimeTrace& input, const std::function<cplx(double)>& transfer,
                         std::size_t pad_factor) {
  if (pad_factor < 1) throw InvalidArgument("pad_factor must be >= 1");
  const std::size_t n = input.size();
  const std::size_t n_fft = n * pad_factor;
  const auto x = input.as_double();
  auto spectrum = rfft(x, n_fft);
  for (std::size_t k = 0; k < spectrum.size(); ++k)
    spectrum[k] *= std::conj(transfer(bin_frequency(k, n_fft, input.dt)));  // FFT kernel is exp(-i...)
  auto y = irfft(spectrum, n_fft);
  y.resize(n);
  return TimeTrace::from_double(y, input.dt, input.t0);
}

TimeTrace propagate(const TimeTrace& pulse, const LayerStack& stack, double a, double path_len_m,
                    std::span<const VaporLine> lines, std::size_t pad_factor) {
  return apply_transfer(
      pulse,
      [&](double f) { return stack_transmission(stack, f) * vapor_transmission(f, a, path_len_m, lines); },
      pad_factor);
}

// ---------------------------------------------------------------------------

LayerStack leaf_stack(const LeafParams& leaf, Orientation orientation) {
  const Layer plastic{leaf.plastic_thickness_mm, ConstantIndex{leaf.plastic_n, leaf.plastic_kappa}};
  const Layer upper{leaf.thickness_mm * leaf.upper_share,
                    leaf_layer(leaf, leaf.water_fraction + 0.5 * leaf.water_fraction_contrast)};
  const Layer lower{leaf.thickness_mm * (1.0 - leaf.upper_share),
                    leaf_layer(leaf, leaf.water_fraction - 0.5 * leaf.water_fraction_contrast)};
  if (orientation == Orientation::TopSide) return LayerStack{{plastic, upper, lower, plastic}};
  return LayerStack{{plastic, lower, upper, plastic}};
}

LayerStack wet_stack(const LeafParams& leaf, Orientation orientation, double water_mm) {
  auto stack = leaf_stack(leaf, orientation);
  stack.layers.insert(stack.layers.begin(), Layer{water_mm, leaf.water});
  return stack;
}

double surface_scattering(const LeafParams& leaf, Orientation orientation, double f_thz) {
  if (orientation == Orientation::TopSide) return 1.0;
  const double x = f_thz / leaf.roughness_cutoff_thz;
  return std::exp(-x * x);
}

// ---------------------------------------------------------------------------

DropletPattern::DropletPattern(double beam_area_mm2, double contact_angle_deg)
    : beam_area_(beam_area_mm2), contact_angle_deg_(contact_angle_deg) {
  if (!(beam_area_mm2 > 0.0)) throw InvalidArgument("beam area must be positive");
  if (!(contact_angle_deg > 0.0 && contact_angle_deg < 180.0)) throw InvalidArgument("contact angle out of range");
}

double DropletPattern::cap_volume(double diameter_mm, double cap_height_mm) {
  const double r = 0.5 * diameter_mm;
  return std::numbers::pi * cap_height_mm * (3.0 * r * r + cap_height_mm * cap_height_mm) / 6.0;
}

Droplet DropletPattern::droplet_from_volume(double volume_mm3) const {
  const double t = std::tan(0.5 * contact_angle_deg_ * std::numbers::pi / 180.0);
  const double r = std::cbrt(6.0 * volume_mm3 / (std::numbers::pi * t * (3.0 + t * t)));
  return {2.0 * r, r * t};
}

void DropletPattern::add_droplet(double volume_mm3) {
  if (!(volume_mm3 > 0.0)) throw InvalidArgument("droplet volume must be positive");
  const auto d = droplet_from_volume(volume_mm3);
  droplets_.push_back(d);
  volumes_.push_back(volume_mm3);
  footprint_ += 0.25 * std::numbers::pi * d.diameter_mm * d.diameter_mm;
}

void DropletPattern::grow_droplet(std::size_t i, double volume_mm3) {
  if (i >= droplets_.size()) throw InvalidArgument("droplet index out of range");
  const auto& old = droplets_[i];
  footprint_ -= 0.25 * std::numbers::pi * old.diameter_mm * old.diameter_mm;
  volumes_[i] += volume_mm3;
  droplets_[i] = droplet_from_volume(volumes_[i]);
  footprint_ += 0.25 * std::numbers::pi * droplets_[i].diameter_mm * droplets_[i].diameter_mm;
}

double DropletPattern::water_mass_mg() const {
  double m = 0.0;
  for (double v : volumes_) m += v;
  return m;
}

double DropletPattern::coverage() const { return std::min(1.0, footprint_ / beam_area_); }

std::vector<CoverageClass> DropletPattern::coverage_classes(int classes_per_droplet, double grid_mm) const {
  if (classes_per_droplet < 1) throw InvalidArgument("need at least one thickness class");
  if (!(grid_mm > 0.0)) throw InvalidArgument("thickness grid must be positive");
  std::map<std::int64_t, double> nodes;  // grid node -> area mm^2
  double total_area = 0.0;
  const int k_classes = classes_per_droplet;
  for (const auto& d : droplets_) {
    const double r = 0.5 * d.diameter_mm;
    const double h = d.cap_height_mm;
    const double radius = (r * r + h * h) / (2.0 * h);
    // Volume under the cap inside radius rho, up to a constant.
    auto antiderivative = [&](double rho) {
      const double s = std::max(0.0, radius * radius - rho * rho);
      return -(2.0 * std::numbers::pi / 3.0) * s * std::sqrt(s) - std::numbers::pi * (radius - h) * rho * rho;
    };
    for (int k = 0; k < k_classes; ++k) {
      const double a = r * std::sqrt(static_cast<double>(k) / k_classes);
      const double b = r * std::sqrt(static_cast<double>(k + 1) / k_classes);
      const double area = std::numbers::pi * (b * b - a * a);
      const double thickness = (antiderivative(b) - antiderivative(a)) / area;
      const double pos = std::max(0.0, thickness) / grid_mm;
      const auto lo = static_cast<std::int64_t>(std::floor(pos));
      const double w = pos - static_cast<double>(lo);
      nodes[lo] += area * (1.0 - w);
      nodes[lo + 1] += area * w;
      total_area += area;
    }
  }
  const double norm = std::max(beam_area_, total_area);
  std::vector<CoverageClass> out;
  out.reserve(nodes.size());
  for (const auto& [node, area] : nodes) {
    if (node == 0 || area <= 0.0) continue;
    out.push_back({area / norm, static_cast<double>(node) * grid_mm});
  }
  return out;
}

DropletPattern sample_pattern_step(const DropletPattern& pattern, Rng& rng, double increment_mg,
                                   const DropletParams& params) {
  if (!(increment_mg > 0.0)) throw InvalidArgument("spray increment must be positive");
  DropletPattern next = pattern;
  const double loss = params.deposition_loss_max > 0.0 ? rng.uniform(0.0, params.deposition_loss_max) : 0.0;
  const double target = increment_mg * (1.0 - loss);
  const double t = std::tan(0.5 * next.contact_angle_deg() * std::numbers::pi / 180.0);
  double landed = 0.0;
  while (landed < target) {
    const double diameter = rng.lognormal(params.median_diameter_mm, params.sigma_log);
    const double volume = std::min(DropletPattern::cap_volume(diameter, 0.5 * diameter * t), target - landed);
    landed += volume;
    const auto drops = next.droplets();
    if (!drops.empty() && rng.uniform() < next.coverage()) {
      double total = 0.0;
      for (const auto& d : drops) total += d.diameter_mm * d.diameter_mm;
      double pick = rng.uniform() * total;
      std::size_t i = 0;
      for (; i + 1 < drops.size(); ++i) {
        pick -= drops[i].diameter_mm * drops[i].diameter_mm;
        if (pick < 0.0) break;
      }
      next.grow_droplet(i, volume);
    } else {
      next.add_droplet(volume);
    }
  }
  return next;
}

// ---------------------------------------------------------------------------

TraceSynthesizer::TraceSynthesizer(const TimeTrace& pulse, const LeafParams& leaf, Orientation orientation,
                                   std::vector<VaporLine> lines, double path_len_m, std::size_t pad_factor)
    : pulse_(pulse),
      leaf_(leaf),
      orientation_(orientation),
      lines_(std::move(lines)),
      path_len_m_(path_len_m),
      n_fft_(pulse.size() * pad_factor) {
  if (pad_factor < 1 || pulse.size() < 2) throw InvalidArgument("synthesizer needs a pulse and pad_factor >= 1");
  const auto x = pulse_.as_double();
  pulse_spectrum_ = rfft(x, n_fft_);
  const auto stack = wet_stack(leaf_, orientation_, 1.0);
  freqs_.resize(pulse_spectrum_.size());
  layer_indices_.resize(freqs_.size());
  scattering_.resize(freqs_.size());
  for (std::size_t k = 0; k < freqs_.size(); ++k) {
    freqs_[k] = bin_frequency(k, n_fft_, pulse_.dt);
    auto& idx = layer_indices_[k];
    for (const auto& layer : stack.layers) idx.push_back(refractive_index(layer.material, freqs_[k]));
    scattering_[k] = surface_scattering(leaf_, orientation_, freqs_[k]);
  }
}

const std::vector<cplx>& TraceSynthesizer::wet_transfer(double water_mm) {
  const auto key = static_cast<std::int64_t>(std::llround(water_mm * 1e6));
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const auto stack = wet_stack(leaf_, orientation_, water_mm);
  std::vector<double> thickness;
  for (const auto& layer : stack.layers) thickness.push_back(layer.thickness_mm);
  std::vector<cplx> t(freqs_.size());
  for (std::size_t k = 0; k < freqs_.size(); ++k)
    t[k] = transmission_from_indices(layer_indices_[k], thickness, freqs_[k]) * scattering_[k];
  return cache_.emplace(key, std::move(t)).first->second;
}

std::vector<cplx> TraceSynthesizer::mixture_transfer(std::span<const CoverageClass> coverage) {
  double wet = 0.0;
  for (const auto& c : coverage) wet += c.area_fraction;
  if (wet > 1.0 + 1e-12) throw InvalidArgument("coverage exceeds 1");
  const auto& dry = wet_transfer(0.0);
  std::vector<cplx> h(freqs_.size());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = (1.0 - wet) * dry[k];
  for (const auto& c : coverage) {
    const auto& t = wet_transfer(c.thickness_mm);
    for (std::size_t k = 0; k < h.size(); ++k) h[k] += c.area_fraction * t[k];
  }
  return h;
}

TimeTrace TraceSynthesizer::synthesize(std::span<const CoverageClass> coverage, double a, const NoiseParams& noise,
                                       Rng& rng) {
  auto h = mixture_transfer(coverage);
  double delay = 0.0;
  if (noise.jitter_samples > 0.0) delay = rng.uniform(-noise.jitter_samples, noise.jitter_samples) * pulse_.dt;
  auto spectrum = pulse_spectrum_;
  for (std::size_t k = 0; k < h.size(); ++k) {
    cplx total = h[k] * vapor_transmission(freqs_[k], a, path_len_m_, lines_);
    if (delay != 0.0) total *= std::exp(cplx{0.0, kTwoPi * freqs_[k] * delay});
    spectrum[k] *= std::conj(total);
  }
  auto y = irfft(spectrum, n_fft_);
  y.resize(pulse_.size());
  if (noise.sigma > 0.0)
    for (auto& v : y) v += noise.sigma * rng.normal();
  return TimeTrace::from_double(y, pulse_.dt, pulse_.t0);
}

TimeTrace trace_from_pattern(const DropletPattern& pattern, const LeafParams& leaf, Orientation orientation,
                             const TimeTrace& pulse, double a, const NoiseParams& noise, Rng& rng,
                             const DropletParams& droplet_params, double path_len_m,
                             std::span<const VaporLine> lines) {
  std::vector<VaporLine> table(lines.begin(), lines.end());
  if (table.empty()) table = default_vapor_lines();
  TraceSynthesizer synth(pulse, leaf, orientation, std::move(table), path_len_m);
  const auto coverage = pattern.coverage_classes(droplet_params.thickness_classes, droplet_params.thickness_grid_mm);
  return synth.synthesize(coverage, a, noise, rng);
}

// ---------------------------------------------------------------------------

void SimConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw InvalidArgument(std::string("sim config: ") + name + " must be positive");
  };
  if (n_series < 0) throw InvalidArgument("sim config: n_series must be >= 0");
  if (acquisitions_per_series < 1) throw InvalidArgument("sim config: acquisitions_per_series must be >= 1");
  if (n_t < 64) throw InvalidArgument("sim config: n_t must be >= 64");
  if (pad_factor < 1) throw InvalidArgument("sim config: pad_factor must be >= 1");
  positive(dt, "dt");
  positive(pulse.width_ps, "pulse.width_ps");
  positive(pulse.amplitude, "pulse.amplitude");
  positive(leaf.thickness_mm, "leaf.thickness_mm");
  positive(beam_area_mm2, "beam_area_mm2");
  positive(max_g, "max_g");
  positive(spray_shape, "spray_shape");
  positive(droplets.median_diameter_mm, "droplets.median_diameter_mm");
  positive(droplets.thickness_grid_mm, "droplets.thickness_grid_mm");
  positive(leaf.roughness_cutoff_thz, "leaf.roughness_cutoff_thz");
  if (droplets.thickness_classes < 1) throw InvalidArgument("sim config: droplets.thickness_classes must be >= 1");
  if (!(runoff_min_fraction > 0.0 && runoff_min_fraction <= 1.0))
    throw InvalidArgument("sim config: runoff_min_fraction must be in (0, 1]");
  if (!(humidity_min >= 0.0 && humidity_max >= humidity_min))
    throw InvalidArgument("sim config: humidity range must satisfy 0 <= min <= max");
  if (!(leaf.water_fraction >= 0.0 && leaf.water_fraction <= 1.0))
    throw InvalidArgument("sim config: leaf.water_fraction must be in [0, 1]");
  if (droplets.deposition_loss_max < 0.0 || droplets.deposition_loss_max >= 1.0)
    throw InvalidArgument("sim config: droplets.deposition_loss_max must be in [0, 1)");
  if (leaf_water_drift < 0.0 || leaf_water_drift >= 1.0)
    throw InvalidArgument("sim config: leaf_water_drift must be in [0, 1)");
  if (gravimetric_noise_mg < 0.0 || humidity_noise < 0.0 || jitter_samples < 0.0 || leaf_water_jitter < 0.0)
    throw InvalidArgument("sim config: noise levels must be non-negative");
}

std::uint64_t SimConfig::hash() const {
  Fnv1a h;
  h.u64(static_cast<std::uint64_t>(n_series));
  h.u64(static_cast<std::uint64_t>(acquisitions_per_series));
  h.u64(static_cast<std::uint64_t>(first_series_id));
  h.u64(orientation == Orientation::TopSide ? 0 : 1);
  h.u64(seed);
  h.u64(n_t);
  h.f64(dt);
  h.f64(t0);
  h.u64(pad_factor);
  for (double v : {pulse.center_ps, pulse.width_ps, pulse.amplitude, leaf.thickness_mm, leaf.water_fraction,
                   leaf.upper_share, leaf.water_fraction_contrast, leaf.eps_dry.real(), leaf.eps_dry.imag(),
                   leaf.plastic_thickness_mm, leaf.plastic_n, leaf.plastic_kappa, leaf.roughness_cutoff_thz,
                   leaf.water.eps_static, leaf.water.eps_mid, leaf.water.eps_inf, leaf.water.tau_slow_ps,
                   leaf.water.tau_fast_ps, leaf_water_drift, leaf_water_jitter, droplets.contact_angle_deg,
                   droplets.median_diameter_mm, droplets.sigma_log, droplets.thickness_grid_mm,
                   droplets.deposition_loss_max, beam_area_mm2, bottom_contact_angle_deg, max_g,
                   runoff_min_fraction, spray_shape, gravimetric_noise_mg, humidity_min, humidity_max,
                   humidity_swing, humidity_noise, vapor_path_m, snr_db, jitter_samples})
    h.f64(v);
  h.u64(static_cast<std::uint64_t>(droplets.thickness_classes));
  h.u64(noise ? 1 : 0);
  for (const auto& l : vapor_lines) {
    h.f64(l.center_thz);
    h.f64(l.strength);
    h.f64(l.half_width_thz);
  }
  return h.value();
}

namespace {

std::vector<SampleRecord> generate_series(const SimConfig& cfg, int s, const TimeTrace& pulse) {
  Rng rng = Rng(cfg.seed).substream(static_cast<std::uint64_t>(s));
  const double progress = cfg.n_series > 1 ? static_cast<double>(s) / (cfg.n_series - 1) : 0.0;
  LeafParams leaf = cfg.leaf;
  leaf.water_fraction = std::clamp(
      cfg.leaf.water_fraction * (1.0 - cfg.leaf_water_drift * progress) + cfg.leaf_water_jitter * rng.normal(), 0.0,
      1.0);
  const double contact =
      cfg.orientation == Orientation::TopSide ? cfg.droplets.contact_angle_deg : cfg.bottom_contact_angle_deg;

  TraceSynthesizer synth(pulse, leaf, cfg.orientation, cfg.vapor_lines, cfg.vapor_path_m, cfg.pad_factor);
  NoiseParams noise;
  if (cfg.noise) {
    Rng unused(0);
    const auto dry = synth.synthesize({}, 0.0, NoiseParams{}, unused);
    const float peak = *std::max_element(dry.samples.begin(), dry.samples.end());
    noise.sigma = static_cast<double>(peak) * std::pow(10.0, -cfg.snr_db / 20.0);
    noise.jitter_samples = cfg.jitter_samples;
  }

  const double runoff = cfg.max_g * rng.uniform(cfg.runoff_min_fraction, 1.0);
  const double mean_increment = runoff / cfg.acquisitions_per_series;
  const double humidity_base = rng.uniform(cfg.humidity_min, cfg.humidity_max);
  const double humidity_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  DropletPattern pattern(cfg.beam_area_mm2, contact);
  double sprayed = 0.0;
  std::vector<SampleRecord> out;
  const int max_steps = 2 * cfg.acquisitions_per_series;
  for (int i = 0; i < max_steps; ++i) {
    if (i > 0) {
      const double increment = mean_increment * rng.gamma(cfg.spray_shape) / cfg.spray_shape;
      if (sprayed + increment > runoff) break;  // first droplet runs down the leaf
      pattern = sample_pattern_step(pattern, rng, increment, cfg.droplets);
      sprayed += increment;
    }
    const double phase = 2.0 * std::numbers::pi * i / cfg.acquisitions_per_series + humidity_phase;
    const double a =
        std::max(0.0, humidity_base + cfg.humidity_swing * std::sin(phase) + cfg.humidity_noise * rng.normal());
    const auto coverage = pattern.coverage_classes(cfg.droplets.thickness_classes, cfg.droplets.thickness_grid_mm);
    SampleRecord rec;
    rec.trace = synth.synthesize(coverage, a, noise, rng);
    rec.g_b = i == 0 ? 0.0 : std::max(0.0, sprayed + cfg.gravimetric_noise_mg * rng.normal());
    rec.a = a;
    rec.series_id = cfg.first_series_id + s;
    rec.acq_index = i;
    rec.orientation = cfg.orientation;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const SimConfig& config) {
  config.validate();
  const auto pulse = synth_reference_pulse(config.n_t, config.dt, config.pulse, config.t0);
  std::vector<std::vector<SampleRecord>> per_series(static_cast<std::size_t>(config.n_series));
  parallel_for(per_series.size(),
               [&](std::size_t s) { per_series[s] = generate_series(config, static_cast<int>(s), pulse); });
  Dataset d;
  for (auto& series : per_series)
    for (auto& r : series) d.records.push_back(std::move(r));
  std::ostringstream prov;
  prov << "thzleaf synth orientation=" << to_string(config.orientation) << " n_series=" << config.n_series
       << " acquisitions_per_series=" << config.acquisitions_per_series << " seed=" << config.seed;
  d.provenance = prov.str();
  d.config_hash = config.hash();
  return d;
}

// ---------------------------------------------------------------------------

std::vector<double> xi_statistic(const TimeTrace& trace, const TimeTrace& reference) {
  if (trace.size() != reference.size()) throw InvalidArgument("xi: traces differ in length");
  if (trace.samples.empty()) throw InvalidArgument("xi: empty trace");
  const double m = *std::max_element(trace.samples.begin(), trace.samples.end());
  const double m0 = *std::max_element(reference.samples.begin(), reference.samples.end());
  if (!(m > 0.0) || !(m0 > 0.0)) throw InvalidArgument("xi: zero maximum");
  std::vector<double> xi(trace.size());
  for (std::size_t i = 0; i < xi.size(); ++i)
    xi[i] = static_cast<double>(trace.samples[i]) / m - static_cast<double>(reference.samples[i]) / m0;
  return xi;
}

std::vector<double> std_trace(const Dataset& dataset) {
  if (dataset.size() < 2) throw InvalidArgument("std_trace needs at least 2 records");
  dataset.validate();
  const std::size_t n_t = dataset.n_t();
  const double n = static_cast<double>(dataset.size());
  std::vector<double> mean(n_t, 0.0), var(n_t, 0.0);
  for (const auto& r : dataset.records)
    for (std::size_t k = 0; k < n_t; ++k) mean[k] += r.trace.samples[k];
  for (auto& m : mean) m /= n;
  for (const auto& r : dataset.records)
    for (std::size_t k = 0; k < n_t; ++k) {
      const double d = r.trace.samples[k] - mean[k];
      var[k] += d * d;
    }
  for (auto& v : var) v = std::sqrt(v / n);
  return var;
}

}  // namespace thzleaf::sim
