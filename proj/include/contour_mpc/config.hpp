#pragma once

// Run configuration: flat `key = value` lines grouped by `[section]` headers.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "contour_mpc/gantry.hpp"

namespace cmpc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ExperimentConfig exp;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  /// Overrides the rest state at the path start.
  std::optional<Vec> x0;
};

/// Environment variable that replaces [run] output_dir when set.
inline constexpr const char* kOutputDirEnv = "CONTOUR_MPC_OUT";

/// Parses and validates. Unknown sections or keys, malformed numbers and
/// values that fail a module precondition raise ConfigError naming the line.
RunConfig parse_config(std::istream& is, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Canonical text form; parse_config(write_config(c)) reproduces c.
std::string write_config(const RunConfig& c);

}  // namespace cmpc
