#include "omnisal/log.hpp"

#include <iostream>
#include <mutex>

namespace omnisal::log {

namespace {

void stderr_sink(Level level, const std::string& message) {
    std::cerr << (level == Level::warning ? "warning: " : "info: ") << message << '\n';
}

std::mutex g_mutex;
Sink g_sink = stderr_sink;

void emit(Level level, const std::string& message) {
    std::lock_guard lock(g_mutex);
    g_sink(level, message);
}

}  // namespace

void set_sink(Sink sink) {
    std::lock_guard lock(g_mutex);
    g_sink = std::move(sink);
}

void reset_sink() { set_sink(stderr_sink); }

void info(const std::string& message) { emit(Level::info, message); }
void warn(const std::string& message) { emit(Level::warning, message); }

}  // namespace omnisal::log
