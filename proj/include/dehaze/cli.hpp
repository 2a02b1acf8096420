#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dehaze::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kRuntime = 3,
  kNonFinite = 4,
  kDigestMismatch = 5,
  kNetwork = 6,
};

/// Runs one subcommand. args excludes the program name. Failures are
/// reported on `err` as a single JSON line {"error": kind, "message": text}.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dehaze::cli
