#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace u2ad::cli {

/// Exit codes of run().
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kDataError = 2;
inline constexpr int kRuntimeFailure = 3;

/// Entry point of the `u2ad` tool: one verb per invocation. Failures print a
/// single `error: <kind>: <reason>` line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace u2ad::cli
