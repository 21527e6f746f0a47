#pragma once

#include <iosfwd>

namespace vmatflux {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitState = 3;

/// Entry point of the vmatflux tool. Exit codes: 0 success, 2 usage or
/// input error, 3 state or shape error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vmatflux
