#pragma once

namespace basrec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Maps the active exception to an exit code. Call only inside a catch block.
int exit_code_for_current_exception();

}  // namespace basrec::cli
