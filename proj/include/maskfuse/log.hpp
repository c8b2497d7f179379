#pragma once

#include <cstdarg>
#include <cstdio>

namespace maskfuse {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

LogLevel log_level();
void set_log_level(LogLevel level);
void log_message(LogLevel level, const char* fmt, ...);

}  // namespace maskfuse

#define MF_LOG_DEBUG(...) ::maskfuse::log_message(::maskfuse::LogLevel::Debug, __VA_ARGS__)
#define MF_LOG_INFO(...) ::maskfuse::log_message(::maskfuse::LogLevel::Info, __VA_ARGS__)
#define MF_LOG_WARN(...) ::maskfuse::log_message(::maskfuse::LogLevel::Warn, __VA_ARGS__)
#define MF_LOG_ERROR(...) ::maskfuse::log_message(::maskfuse::LogLevel::Error, __VA_ARGS__)
