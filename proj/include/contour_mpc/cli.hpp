#pragma once

// Command-line surface. Exit codes: 0 success, 2 config error, 3 offline
// computation failure, 4 online infeasibility, 5 verification failure.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace cmpc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitOffline = 3;
inline constexpr int kExitInfeasible = 4;
inline constexpr int kExitVerify = 5;

/// Compiles feasible sets, the switch CI family (with reach tubes) and a
/// summary into <output_dir>/sets.
int cmd_sets(const std::string& config_path, std::ostream& out, std::ostream& err);

/// Closed-loop run. Loads sets from `sets_dir` when given, otherwise reuses
/// <output_dir>/sets if it was compiled from the same config, otherwise
/// compiles them. Writes trace.csv and summary.txt into output_dir.
int cmd_simulate(const std::string& config_path, const std::optional<std::string>& sets_dir,
                 std::ostream& out, std::ostream& err);

/// Certifies a sets directory: family checks plus annulus soundness and
/// coverage sampling. samples = 0 keeps only the exact checks.
int cmd_verify(const std::string& sets_dir, int samples, std::uint64_t seed, std::ostream& out,
               std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace cmpc
