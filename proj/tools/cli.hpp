#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace btcxr::cli {

/// Exit codes of the btcxr command.
enum ExitCode : int { kOk = 0, kDomainError = 1, kUsageError = 2 };

/// Parses argv (argv[0] is the program name) and runs one subcommand.
/// Results without an --out path go to `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace btcxr::cli
