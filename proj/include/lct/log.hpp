#pragma once

#include <functional>
#include <string>

namespace lct::log {

enum class Level { info, warning };

using Sink = std::function<void(Level, const std::string&)>;

// Replaces the process-wide sink; an empty sink restores stderr output.
void set_sink(Sink sink);

void info(const std::string& message);
void warn(const std::string& message);

}  // namespace lct::log
