#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace l2d::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kNumericalError = 4;

/// Runs one subcommand. `args` excludes the program name. Artifacts go to
/// files, logs and the one-line error report to `err`, and `--print` output
/// to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace l2d::cli
