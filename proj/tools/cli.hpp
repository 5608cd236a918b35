#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dynxl::cli {

// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,            // divergence or any other runtime failure
  kBadInput = 2,           // invalid config, unknown key, unreadable input
  kFingerprintMismatch = 3,
  kMissingStats = 4,
  kReportMismatch = 5,
};

/// Runs the tool with argv-style arguments (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dynxl::cli
