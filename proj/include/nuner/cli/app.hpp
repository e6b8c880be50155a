#pragma once

namespace nuner::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `nuner` tool. Returns 0 on success, 1 on a runtime
/// failure and 2 on a usage or configuration error.
int run(int argc, const char* const* argv);

}  // namespace nuner::cli
