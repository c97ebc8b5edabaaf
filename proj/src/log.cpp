#include "basrec/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <utility>

namespace basrec::log {
namespace {

std::mutex g_mutex;
Sink g_sink;
std::atomic<std::uint64_t> g_warnings{0};
std::atomic<bool> g_quiet{false};

void emit(std::string_view level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(level, message);
  } else {
    std::cerr << "[" << level << "] " << message << "\n";
  }
}

}  // namespace

void warn(std::string_view message) {
  g_warnings.fetch_add(1, std::memory_order_relaxed);
  emit("warn", message);
}

void info(std::string_view message) {
  if (!g_quiet.load(std::memory_order_relaxed)) emit("info", message);
}

std::uint64_t warning_count() { return g_warnings.load(std::memory_order_relaxed); }

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  return std::exchange(g_sink, std::move(sink));
}

void set_quiet(bool quiet) { g_quiet.store(quiet, std::memory_order_relaxed); }

}  // namespace basrec::log
