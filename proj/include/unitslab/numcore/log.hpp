#pragma once

#include <cstddef>
#include <functional>
#include <string_view>

namespace unitslab {

enum class LogLevel { Info, Warning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

/// Replaces the process-wide sink (stderr by default). Returns the previous one.
LogSink set_log_sink(LogSink sink);
void set_log_quiet(bool quiet) noexcept;

void log_info(std::string_view message);
void log_warning(std::string_view message);

/// Number of warnings emitted since start-up, including suppressed ones.
std::size_t warning_count() noexcept;

} // namespace unitslab
