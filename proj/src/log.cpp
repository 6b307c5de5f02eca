#include "lct/log.hpp"

#include <iostream>
#include <mutex>

namespace lct::log {
namespace {

std::mutex g_mutex;
Sink g_sink;

void emit(Level level, const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(level, message);
    return;
  }
  std::cerr << (level == Level::warning ? "warning: " : "info: ") << message << '\n';
}

}  // namespace

void set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void info(const std::string& message) { emit(Level::info, message); }
void warn(const std::string& message) { emit(Level::warning, message); }

}  // namespace lct::log
