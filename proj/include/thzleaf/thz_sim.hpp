#pragma once

// Synthetic THz transmission traces of wet leaves.
//
// Conventions: frequency f in THz, time in ps, lengths in mm, humidity in g/m^3,
// water mass in mg (density 1 mg/mm^3). Material laws and transfer functions use
// the exp(-i omega t) convention, so passive media have Im(eps) >= 0 and a
// propagation phase exp(+i k d) is a delay.

#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "thzleaf/core_data.hpp"
#include "thzleaf/rng.hpp"

namespace thzleaf::sim {

using cplx = std::complex<double>;

inline constexpr double kSpeedOfLight = 0.299792458;  // mm/ps

// ---------------------------------------------------------------------------
// Materials

/// Two-relaxation Debye model of liquid water, 25 degC literature values.
struct DoubleDebyeWater {
  double eps_static = 78.36;
  double eps_mid = 4.93;
  double eps_inf = 3.48;
  double tau_slow_ps = 8.24;
  double tau_fast_ps = 0.18;
};

/// Leaf tissue as a volume-weighted linear mix of water and dry matter.
struct EffectiveLeaf {
  double water_volume_fraction = 0.55;
  cplx eps_dry{2.5, 0.05};
  DoubleDebyeWater water{};
};

struct ConstantIndex {
  double n = 1.0;
  double kappa = 0.0;
};

using DielectricModel = std::variant<DoubleDebyeWater, EffectiveLeaf, ConstantIndex>;

cplx permittivity(const DielectricModel& model, double f_thz);
/// Principal square root of the permittivity, n + i kappa with kappa >= 0.
cplx refractive_index(const DielectricModel& model, double f_thz);
/// Intensity absorption coefficient 2 omega kappa / c in cm^-1.
double power_absorption_per_cm(const DielectricModel& model, double f_thz);

// ---------------------------------------------------------------------------
// Stratified media

struct Layer {
  double thickness_mm = 0.0;
  DielectricModel material;
};

/// Layers in beam order (entrance first), bounded by semi-infinite air.
struct LayerStack {
  std::vector<Layer> layers;
};

/// Normal-incidence amplitude transmission from the entrance plane to the exit
/// plane, including all internal reflections. Zero-thickness layers are skipped.
cplx stack_transmission(const LayerStack& stack, double f_thz);

/// Same computation from precomputed complex indices; used by the trace
/// synthesizer so that it shares one code path with stack_transmission.
cplx transmission_from_indices(std::span<const cplx> indices, std::span<const double> thickness_mm, double f_thz);

// ---------------------------------------------------------------------------
// Water vapour

struct VaporLine {
  double center_thz;
  double strength;  // amplitude optical depth at line centre per (g/m^3 * m)
  double half_width_thz;
};

/// Eight strong rotational lines of water vapour between 0.55 and 1.7 THz.
std::vector<VaporLine> default_vapor_lines();

/// exp(-a * L * sum_j s_j D_j(f)) with a causal, Hermitian Lorentz line shape
/// D_j normalised to Re D_j(f_j) ~ 1. a = 0 gives exactly 1.
cplx vapor_transmission(double f_thz, double a, double path_len_m, std::span<const VaporLine> lines);

// ---------------------------------------------------------------------------
// Pulses and propagation

struct PulseParams {
  double center_ps = 2.15;
  double width_ps = 0.17;  // Gaussian sigma; spectral peak at 1 / (2 pi width)
  double amplitude = 18.0;
};

/// Single-cycle pulse -A x exp((1 - x^2) / 2), x = (t - center) / width: a
/// positive lobe of height A followed by a negative lobe of depth A.
TimeTrace synth_reference_pulse(std::size_t n_t, double dt, const PulseParams& params = {}, double t0 = 0.0);

/// Applies a transfer function to `input` on a zero-padded grid of
/// pad_factor * n_t points and returns the first n_t output samples.
/// `transfer` is evaluated at every non-negative grid frequency.
TimeTrace apply_transfer(const TimeTrace& input, const std::function<cplx(double)>& transfer,
                         std::size_t pad_factor = 4);

/// Pulse through `stack` and an air path of length path_len_m at humidity a.
TimeTrace propagate(const TimeTrace& pulse, const LayerStack& stack, double a, double path_len_m,
                    std::span<const VaporLine> lines, std::size_t pad_factor = 4);

// ---------------------------------------------------------------------------
// Leaf sample

struct LeafParams {
  double thickness_mm = 0.3;
  double water_fraction = 0.55;
  /// Adaxial (upper) share of the leaf thickness and the water-fraction offset
  /// between the adaxial and abaxial sublayers.
  double upper_share = 0.4;
  double water_fraction_contrast = 0.1;
  cplx eps_dry{2.5, 0.05};
  double plastic_thickness_mm = 0.08;
  double plastic_n = 1.53;
  double plastic_kappa = 0.002;
  /// Amplitude roll-off exp(-(f / cutoff)^2) from the rough abaxial surface,
  /// applied when the beam enters through the bottom side. 3.2 THz matches a
  /// Kirchhoff loss for about 30 um rms height at the plastic/leaf interface.
  double roughness_cutoff_thz = 3.2;
  DoubleDebyeWater water{};
};

/// [plastic, leaf sublayer, leaf sublayer, plastic]; sublayer order follows the
/// side facing the emitter.
LayerStack leaf_stack(const LeafParams& leaf, Orientation orientation);
/// Water film of the given thickness in front of the leaf stack.
LayerStack wet_stack(const LeafParams& leaf, Orientation orientation, double water_mm);
/// Surface-scattering factor; 1 for TopSide.
double surface_scattering(const LeafParams& leaf, Orientation orientation, double f_thz);

// ---------------------------------------------------------------------------
// Droplet patterns

struct Droplet {
  double diameter_mm;
  double cap_height_mm;
};

struct CoverageClass {
  double area_fraction;
  double thickness_mm;
};

struct DropletParams {
  double contact_angle_deg = 60.0;
  double median_diameter_mm = 0.5;
  double sigma_log = 0.4;
  int thickness_classes = 4;
  /// Coverage thicknesses are distributed onto this grid (volume preserving).
  double thickness_grid_mm = 0.002;
  /// Fraction of a spray increment that may miss the beam area, drawn U(0, max).
  double deposition_loss_max = 0.05;
};

/// Spherical-cap droplets with a fixed contact angle inside the beam area.
class DropletPattern {
 public:
  DropletPattern() = default;
  DropletPattern(double beam_area_mm2, double contact_angle_deg);

  double beam_area_mm2() const { return beam_area_; }
  double contact_angle_deg() const { return contact_angle_deg_; }
  std::span<const Droplet> droplets() const { return droplets_; }

  /// Adds a droplet of the given water volume (mm^3 = mg).
  void add_droplet(double volume_mm3);
  /// Adds volume to droplet i; it grows at the same contact angle.
  void grow_droplet(std::size_t i, double volume_mm3);

  double water_mass_mg() const;
  /// Footprint area over beam area, capped at 1.
  double coverage() const;
  /// Area fractions and water thicknesses on the thickness grid, ascending in
  /// thickness, zero-thickness entries dropped. Sum of fractions <= 1.
  std::vector<CoverageClass> coverage_classes(int classes_per_droplet, double grid_mm) const;

  static double cap_volume(double diameter_mm, double cap_height_mm);
  Droplet droplet_from_volume(double volume_mm3) const;

 private:
  double beam_area_ = 350.0;
  double contact_angle_deg_ = 60.0;
  std::vector<Droplet> droplets_;
  std::vector<double> volumes_;
  double footprint_ = 0.0;
};

/// One spray step: about `increment_mg` of new water lands as log-normal
/// droplets; a droplet hitting existing water (probability = coverage) merges
/// with a footprint-weighted existing droplet.
DropletPattern sample_pattern_step(const DropletPattern& pattern, Rng& rng, double increment_mg,
                                   const DropletParams& params);

// ---------------------------------------------------------------------------
// Trace synthesis

struct NoiseParams {
  double sigma = 0.0;          // additive white Gaussian, trace units
  double jitter_samples = 0.0;  // timing jitter drawn U(-j, j) samples
};

/// Precomputes pulse spectrum and per-frequency material indices for one leaf
/// and orientation, then mixes area-weighted wet and dry transmissions.
class TraceSynthesizer {
 public:
  TraceSynthesizer(const TimeTrace& pulse, const LeafParams& leaf, Orientation orientation,
                   std::vector<VaporLine> lines, double path_len_m, std::size_t pad_factor = 4);

  /// Noise-free mixture transfer function (without vapour) on the padded grid.
  std::vector<cplx> mixture_transfer(std::span<const CoverageClass> coverage);

  TimeTrace synthesize(std::span<const CoverageClass> coverage, double a, const NoiseParams& noise, Rng& rng);

  const std::vector<double>& frequencies() const { return freqs_; }

 private:
  const std::vector<cplx>& wet_transfer(double water_mm);

  TimeTrace pulse_;
  LeafParams leaf_;
  Orientation orientation_;
  std::vector<VaporLine> lines_;
  double path_len_m_;
  std::size_t n_fft_;
  std::vector<double> freqs_;
  std::vector<cplx> pulse_spectrum_;
  std::vector<std::vector<cplx>> layer_indices_;  // per frequency: water, leaf layers
  std::vector<double> scattering_;
  std::map<std::int64_t, std::vector<cplx>> cache_;  // keyed by thickness in nm
};

/// Area-weighted incoherent mixture of wet and dry propagation plus noise and
/// timing jitter.
TimeTrace trace_from_pattern(const DropletPattern& pattern, const LeafParams& leaf, Orientation orientation,
                             const TimeTrace& pulse, double a, const NoiseParams& noise, Rng& rng,
                             const DropletParams& droplet_params = {}, double path_len_m = 0.5,
                             std::span<const VaporLine> lines = {});

// ---------------------------------------------------------------------------
// Dataset generation

struct SimConfig {
  int n_series = 39;
  int acquisitions_per_series = 272;
  int first_series_id = 0;
  Orientation orientation = Orientation::TopSide;
  std::uint64_t seed = 1;

  std::size_t n_t = 760;
  double dt = 0.05;
  double t0 = 0.0;
  std::size_t pad_factor = 4;

  PulseParams pulse{};
  LeafParams leaf{};
  /// Relative loss of leaf water fraction from the first to the last series.
  double leaf_water_drift = 0.18;
  double leaf_water_jitter = 0.01;

  DropletParams droplets{};
  double beam_area_mm2 = 150.0;
  /// Contact angle used when the bottom side faces the emitter.
  double bottom_contact_angle_deg = 75.0;

  /// Run-off limit: each series draws its run-off mass U(runoff_min_fraction, 1) * max_g.
  double max_g = 25.0;
  double runoff_min_fraction = 0.5;
  /// Gamma shape of the per-step spray mass; its mean is the series run-off
  /// mass divided by acquisitions_per_series.
  double spray_shape = 4.0;
  double gravimetric_noise_mg = 0.05;

  double humidity_min = 8.0;
  double humidity_max = 11.5;
  double humidity_swing = 0.5;
  double humidity_noise = 0.05;
  double vapor_path_m = 0.5;
  std::vector<VaporLine> vapor_lines = default_vapor_lines();

  double snr_db = 40.0;  // relative to the series' dry peak
  double jitter_samples = 0.5;
  bool noise = true;

  /// Throws InvalidArgument on non-positive scales or inconsistent ranges.
  void validate() const;
  std::uint64_t hash() const;
};

Dataset generate_dataset(const SimConfig& config);

// ---------------------------------------------------------------------------
// Dataset-level statistics

/// trace / max(trace) - reference / max(reference), per sample.
std::vector<double> xi_statistic(const TimeTrace& trace, const TimeTrace& reference);

/// Per-sample population standard deviation across all records.
std::vector<double> std_trace(const Dataset& dataset);

}  // namespace thzleaf::sim
