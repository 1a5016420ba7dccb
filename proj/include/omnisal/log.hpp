#pragma once

#include <functional>
#include <string>

namespace omnisal::log {

enum class Level { info, warning };

using Sink = std::function<void(Level, const std::string&)>;

/// Default sink writes "warning: ..." / "info: ..." lines to stderr.
void set_sink(Sink sink);
void reset_sink();

void info(const std::string& message);
void warn(const std::string& message);

}  // namespace omnisal::log
