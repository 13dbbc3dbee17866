#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace disco::cli {

// Exit statuses shared by every command.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kConfig = 2;
inline constexpr int kData = 3;
inline constexpr int kDivergence = 4;
inline constexpr int kExists = 5;

/// Runs one command line (args[0] is the program name). Reports go to `out`,
/// diagnostics and progress to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace disco::cli
