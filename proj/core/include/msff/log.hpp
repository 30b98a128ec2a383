#pragma once

#include <functional>
#include <string>

namespace msff::log {

enum class Level { Info, Warning };

using Sink = std::function<void(Level, const std::string&)>;

/// Replaces the process-wide sink (default: stderr for warnings, info
/// dropped). Returns the previous sink.
Sink set_sink(Sink sink);

void info(const std::string& message);
void warn(const std::string& message);

}  // namespace msff::log
