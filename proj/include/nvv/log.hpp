#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace nvv {

enum class LogLevel { quiet = 0, warn = 1, info = 2 };

inline std::atomic<int>& log_level() {
  static std::atomic<int> level{static_cast<int>(LogLevel::warn)};
  return level;
}

inline void set_log_level(LogLevel l) { log_level() = static_cast<int>(l); }

inline void warn(std::string_view msg) {
  if (log_level() >= static_cast<int>(LogLevel::warn)) std::cerr << "warning: " << msg << '\n';
}

inline void info(std::string_view msg) {
  if (log_level() >= static_cast<int>(LogLevel::info)) std::cerr << msg << '\n';
}

}  // namespace nvv
