#ifndef DKPS_CLI_HPP
#define DKPS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace dkps::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Exit statuses.
enum Status : int { kOk = 0, kUsage = 1, kDataError = 2 };

/// Runs one command line (args[0] is the program name). Errors are reported
/// on `err` as a single line "error: <Code>: <message>".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

} // namespace dkps::cli

#endif
