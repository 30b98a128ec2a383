#include "msff/log.hpp"

#include <iostream>
#include <mutex>

namespace msff::log {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](Level level, const std::string& message) {
    if (level == Level::Warning) std::cerr << "warning: " << message << '\n';
  };
  return sink;
}

void emit(Level level, const std::string& message) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) current_sink()(level, message);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  return std::exchange(current_sink(), std::move(sink));
}

void info(const std::string& message) { emit(Level::Info, message); }
void warn(const std::string& message) { emit(Level::Warning, message); }

}  // namespace msff::log
