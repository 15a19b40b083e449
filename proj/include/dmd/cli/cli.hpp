#pragma once

#include <iosfwd>

namespace dmd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

/// Runs one dmdnet subcommand. Failures print a single JSON line on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dmd::cli
