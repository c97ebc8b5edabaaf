#pragma once

#include <cstdint>
#include <functional>
#include <string_view>

namespace basrec::log {

/// Emits a warning line (default sink: stderr) and bumps the process-wide
/// warning counter. Thread-safe.
void warn(std::string_view message);
void info(std::string_view message);

std::uint64_t warning_count();

/// Replaces the output sink; pass an empty function to restore stderr.
/// Returns the previous sink.
using Sink = std::function<void(std::string_view level, std::string_view message)>;
Sink set_sink(Sink sink);

/// Suppresses info() output (warnings are still counted and emitted).
void set_quiet(bool quiet);

}  // namespace basrec::log
