#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace thzleaf {

/// One sampled transmitted field E(t). Samples are stored in single precision,
/// the same representation as the on-disk payload, so datasets round-trip exactly.
struct TimeTrace {
  std::vector<float> samples;
  double dt = 0.05;  // ps per sample
  double t0 = 0.0;   // ps, time of the first sample

  std::size_t size() const { return samples.size(); }
  double time(std::size_t i) const { return t0 + dt * static_cast<double>(i); }
  double span() const { return samples.empty() ? 0.0 : dt * static_cast<double>(samples.size() - 1); }
  std::vector<double> as_double() const { return {samples.begin(), samples.end()}; }
  static TimeTrace from_double(std::span<const double> values, double dt, double t0);

  bool operator==(const TimeTrace&) const = default;
};

/// Which leaf surface faces the emitter. The water pattern is always on the
/// emitter side; TopSide is the smooth adaxial surface.
enum class Orientation { TopSide, BottomSide };

std::string to_string(Orientation o);
Orientation orientation_from_string(const std::string& s);

struct SampleRecord {
  TimeTrace trace;
  double g_b = 0.0;  // mg, gravimetric water weight
  double a = 0.0;    // g/m^3, absolute humidity
  int series_id = 0;
  int acq_index = 0;
  Orientation orientation = Orientation::TopSide;

  bool operator==(const SampleRecord&) const = default;
};

class Dataset {
 public:
  std::vector<SampleRecord> records;
  std::string provenance;
  std::uint64_t config_hash = 0;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  /// Trace length shared by all records, 0 for an empty dataset.
  std::size_t n_t() const { return records.empty() ? 0 : records.front().trace.size(); }

  /// Throws FormatError unless all traces share (n_t, dt, t0), all samples are
  /// finite, and g_b, a are non-negative.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
  /// Ascending list of distinct series ids.
  std::vector<int> series_ids() const;
  std::vector<double> targets() const;
  std::vector<double> humidity() const;

  /// FNV-1a over payload and metadata; stable across platforms.
  std::uint64_t content_hash() const;

  bool operator==(const Dataset&) const = default;
};

/// Writes `dir/manifest.json` and `dir/traces.f32` (little-endian float32,
/// row-major, one row per record). Creates `dir` if needed.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded permutation, first round(test_fraction * N) entries go to the test
/// side. Both index lists are returned in ascending order.
SplitIndices split_random_indices(std::size_t n, double test_fraction, std::uint64_t seed);
std::pair<Dataset, Dataset> split_random(const Dataset& dataset, double test_fraction, std::uint64_t seed);

SplitIndices split_by_series_indices(const Dataset& dataset, std::span<const int> held_out_series);
std::pair<Dataset, Dataset> split_by_series(const Dataset& dataset, std::span<const int> held_out_series);

/// k disjoint folds covering 0..n-1; the first n % k folds hold one extra index.
std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed);

/// Predictions against benchmarks for one evaluated set.
struct PredictionReport {
  std::vector<double> g_p;
  std::vector<double> g_b;
  std::vector<double> delta;  // g_b - g_p
  double mae = 0.0;
  double median_pct_diff = 0.0;
};

}  // namespace thzleaf
