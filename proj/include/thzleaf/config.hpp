#pragma once

// Run configuration: one YAML file with sections sim, features, dtree, cnn,
// eval and run, plus dotted `section.key=value` overrides.

#include <filesystem>
#include <string>
#include <vector>

#include "thzleaf/eval.hpp"
#include "thzleaf/thz_sim.hpp"

namespace thzleaf {

struct RunConfig {
  sim::SimConfig sim{};
  eval::PipelineConfigs pipeline{};
  eval::ScenarioOptions scenario{};
  unsigned threads = 0;  // 0: hardware concurrency

  /// Resolved configuration as YAML; parse_config(to_yaml()) restores it exactly.
  std::string to_yaml() const;
  void save(const std::filesystem::path& file) const;
};

/// Parses YAML text. Unknown sections or keys and malformed values raise
/// ConfigError anchored to `source` and the offending line. Overrides are
/// applied after the file, each as "section.key=value" with a YAML value.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>",
                       const std::vector<std::string>& overrides = {});

/// Empty path: defaults plus overrides. Unreadable file: IoError.
RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

/// All accepted dotted keys in file order.
std::vector<std::string> config_keys();

}  // namespace thzleaf
