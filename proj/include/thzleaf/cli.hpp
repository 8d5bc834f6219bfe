#pragma once

// Command-line front end: synth, train, eval, scenario and inspect.

#include <string>
#include <vector>

namespace thzleaf::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kPipeline = 5,
};

/// Parses arguments, runs one subcommand and maps failures to exit codes.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace thzleaf::cli
