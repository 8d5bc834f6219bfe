#include "thzleaf/core_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/hash.hpp"
#include "thzleaf/rng.hpp"

namespace thzleaf {

using nlohmann::json;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kPayloadName = "traces.f32";
constexpr int kFormatVersion = 1;

void put_le32(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(u >> (8 * i)));
}

float get_le32(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

template <typename T>
T require(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("manifest: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: field '") + key + "': " + e.what());
  }
}

}  // namespace

TimeTrace TimeTrace::from_double(std::span<const double> values, double dt, double t0) {
  TimeTrace t;
  t.samples.assign(values.begin(), values.end());
  t.dt = dt;
  t.t0 = t0;
  return t;
}

std::string to_string(Orientation o) { return o == Orientation::TopSide ? "top" : "bottom"; }

Orientation orientation_from_string(const std::string& s) {
  if (s == "top") return Orientation::TopSide;
  if (s == "bottom") return Orientation::BottomSide;
  throw InvalidArgument("unknown orientation '" + s + "' (expected top|bottom)");
}

void Dataset::validate() const {
  if (records.empty()) return;
  const auto& ref = records.front().trace;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.trace.size() != ref.size() || r.trace.dt != ref.dt || r.trace.t0 != ref.t0)
      throw FormatError("record " + std::to_string(i) + ": time base differs from record 0");
    for (float v : r.trace.samples)
      if (!std::isfinite(v)) throw FormatError("record " + std::to_string(i) + ": non-finite sample");
    if (!(r.g_b >= 0.0) || !(r.a >= 0.0))
      throw FormatError("record " + std::to_string(i) + ": negative or non-finite g_b / a");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.provenance = provenance;
  out.config_hash = config_hash;
  out.records.reserve(indices.size());
  for (auto i : indices) {
    if (i >= records.size()) throw InvalidArgument("subset index out of range");
    out.records.push_back(records[i]);
  }
  return out;
}

std::vector<int> Dataset::series_ids() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.series_id);
  return {ids.begin(), ids.end()};
}

std::vector<double> Dataset::targets() const {
  std::vector<double> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.g_b);
  return y;
}

std::vector<double> Dataset::humidity() const {
  std::vector<double> a;
  a.reserve(records.size());
  for (const auto& r : records) a.push_back(r.a);
  return a;
}

std::uint64_t Dataset::content_hash() const {
  Fnv1a h;
  h.u64(records.size());
  for (const auto& r : records) {
    h.u64(r.trace.size());
    h.f64(r.trace.dt);
    h.f64(r.trace.t0);
    for (float v : r.trace.samples) h.f32(v);
    h.f64(r.g_b);
    h.f64(r.a);
    h.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(r.series_id)));
    h.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(r.acq_index)));
    h.u64(r.orientation == Orientation::TopSide ? 0 : 1);
  }
  return h.value();
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  const std::size_t n_t = dataset.n_t();
  json manifest;
  manifest["format"] = "thzleaf-dataset";
  manifest["version"] = kFormatVersion;
  manifest["record_count"] = dataset.size();
  manifest["n_t"] = n_t;
  manifest["dt"] = dataset.empty() ? 0.0 : dataset.records.front().trace.dt;
  manifest["t0"] = dataset.empty() ? 0.0 : dataset.records.front().trace.t0;
  manifest["provenance"] = dataset.provenance;
  manifest["config_hash"] = hex64(dataset.config_hash);
  manifest["payload"] = {{"file", kPayloadName}, {"dtype", "float32-le"}, {"layout", "row-major"}};
  json recs = json::array();
  for (const auto& r : dataset.records) {
    recs.push_back({{"g_b", r.g_b},
                    {"a", r.a},
                    {"series_id", r.series_id},
                    {"acq_index", r.acq_index},
                    {"orientation", to_string(r.orientation)}});
  }
  manifest["records"] = std::move(recs);

  std::string payload;
  payload.reserve(dataset.size() * n_t * 4);
  for (const auto& r : dataset.records)
    for (float v : r.trace.samples) put_le32(payload, v);

  {
    std::ofstream out(dir / kManifestName, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / kManifestName).string());
    out << manifest.dump(1) << '\n';
    if (!out) throw IoError("write failed: " + (dir / kManifestName).string());
  }
  {
    std::ofstream out(dir / kPayloadName, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / kPayloadName).string());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("write failed: " + (dir / kPayloadName).string());
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream min(dir / kManifestName, std::ios::binary);
  if (!min) throw IoError("cannot open " + (dir / kManifestName).string());
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::parse_error& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  if (manifest.value("format", std::string{}) != "thzleaf-dataset")
    throw FormatError("manifest.json: not a thzleaf dataset manifest");
  if (require<int>(manifest, "version") != kFormatVersion)
    throw FormatError("manifest.json: unsupported version");

  const auto count = require<std::size_t>(manifest, "record_count");
  const auto n_t = require<std::size_t>(manifest, "n_t");
  const auto dt = require<double>(manifest, "dt");
  const auto t0 = require<double>(manifest, "t0");
  const auto& recs = manifest.at("records");
  if (!recs.is_array() || recs.size() != count)
    throw FormatError("manifest.json: record_count does not match records array");

  std::ifstream pin(dir / kPayloadName, std::ios::binary);
  if (!pin) throw IoError("cannot open " + (dir / kPayloadName).string());
  std::string payload((std::istreambuf_iterator<char>(pin)), std::istreambuf_iterator<char>());
  if (payload.size() != count * n_t * 4)
    throw FormatError("traces.f32: expected " + std::to_string(count * n_t * 4) + " bytes, found " +
                      std::to_string(payload.size()));

  Dataset d;
  d.provenance = require<std::string>(manifest, "provenance");
  d.config_hash = parse_hex64(require<std::string>(manifest, "config_hash"));
  d.records.resize(count);
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < count; ++i) {
    auto& r = d.records[i];
    const auto& m = recs[i];
    r.g_b = require<double>(m, "g_b");
    r.a = require<double>(m, "a");
    r.series_id = require<int>(m, "series_id");
    r.acq_index = require<int>(m, "acq_index");
    try {
      r.orientation = orientation_from_string(require<std::string>(m, "orientation"));
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("manifest.json: ") + e.what());
    }
    r.trace.dt = dt;
    r.trace.t0 = t0;
    r.trace.samples.resize(n_t);
    for (std::size_t k = 0; k < n_t; ++k) r.trace.samples[k] = get_le32(bytes + 4 * (i * n_t + k));
  }
  d.validate();
  return d;
}

SplitIndices split_random_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("split_random needs at least 2 records");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidArgument("test_fraction must be in (0, 1)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(perm));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  SplitIndices s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::pair<Dataset, Dataset> split_random(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  const auto s = split_random_indices(dataset.size(), test_fraction, seed);
  return {dataset.subset(s.train), dataset.subset(s.test)};
}

SplitIndices split_by_series_indices(const Dataset& dataset, std::span<const int> held_out_series) {
  const auto ids = dataset.series_ids();
  const std::set<int> held(held_out_series.begin(), held_out_series.end());
  for (int id : held)
    if (!std::binary_search(ids.begin(), ids.end(), id))
      throw InvalidArgument("unknown series id " + std::to_string(id));
  SplitIndices s;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    (held.contains(dataset.records[i].series_id) ? s.test : s.train).push_back(i);
  return s;
}

std::pair<Dataset, Dataset> split_by_series(const Dataset& dataset, std::span<const int> held_out_series) {
  const auto s = split_by_series_indices(dataset, held_out_series);
  return {dataset.subset(s.train), dataset.subset(s.test)};
}

std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("kfold: k must be >= 2");
  if (n < k) throw InvalidArgument("kfold: n < k");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(perm));
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                    perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos, 16);
    if (pos != s.size()) throw FormatError("bad hex value '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("bad hex value '" + s + "'");
  }
}

}  // namespace thzleaf
