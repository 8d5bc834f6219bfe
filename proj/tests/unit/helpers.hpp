#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "thzleaf/thz_sim.hpp"

namespace testing {

/// Small top-side set: a few series of full-length traces.
inline thzleaf::sim::SimConfig small_sim(int series = 3, int acq = 40, std::uint64_t seed = 11) {
  thzleaf::sim::SimConfig c;
  c.n_series = series;
  c.acquisitions_per_series = acq;
  c.seed = seed;
  return c;
}

inline const thzleaf::Dataset& small_dataset() {
  static const thzleaf::Dataset d = thzleaf::sim::generate_dataset(small_sim());
  return d;
}

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("thzleaf_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing
