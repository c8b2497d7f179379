#include "maskfuse/log.hpp"

namespace maskfuse {

namespace {
LogLevel g_level = LogLevel::Info;
const char* level_tag(LogLevel l) {
    switch (l) {
        case LogLevel::Debug: return "debug";
        case LogLevel::Info: return "info";
        case LogLevel::Warn: return "warn";
        case LogLevel::Error: return "error";
    }
    return "?";
}
}  // namespace

LogLevel log_level() { return g_level; }
void set_log_level(LogLevel level) { g_level = level; }

void log_message(LogLevel level, const char* fmt, ...) {
    if (static_cast<int>(level) < static_cast<int>(g_level)) return;
    std::fprintf(stderr, "[%s] ", level_tag(level));
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fprintf(stderr, "\n");
}

}  // namespace maskfuse
