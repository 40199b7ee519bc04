#include "unitslab/numcore/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace unitslab {

namespace {

std::mutex g_mutex;
std::atomic<bool> g_quiet{false};
std::atomic<std::size_t> g_warnings{0};

LogSink& sink() {
    static LogSink s = [](LogLevel level, std::string_view msg) {
        std::cerr << (level == LogLevel::Warning ? "warning: " : "") << msg << '\n';
    };
    return s;
}

void emit(LogLevel level, std::string_view message) {
    if (level == LogLevel::Warning) g_warnings.fetch_add(1);
    if (g_quiet.load() && level == LogLevel::Info) return;
    std::lock_guard lock(g_mutex);
    if (sink()) sink()(level, message);
}

} // namespace

LogSink set_log_sink(LogSink s) {
    std::lock_guard lock(g_mutex);
    LogSink old = std::move(sink());
    sink() = std::move(s);
    return old;
}

void set_log_quiet(bool quiet) noexcept { g_quiet.store(quiet); }
void log_info(std::string_view message) { emit(LogLevel::Info, message); }
void log_warning(std::string_view message) { emit(LogLevel::Warning, message); }
std::size_t warning_count() noexcept { return g_warnings.load(); }

} // namespace unitslab
