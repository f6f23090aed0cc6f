#pragma once

#include <iostream>
#include <mutex>
#include <sstream>

namespace perfuseg::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

Level threshold();
void set_threshold(Level level);

std::mutex& sink_mutex();

template <typename... Args>
void write(Level level, const char* tag, const Args&... args) {
  if (level < threshold()) return;
  std::ostringstream line;
  line << '[' << tag << "] ";
  (line << ... << args);
  line << '\n';
  std::lock_guard lock(sink_mutex());
  std::cerr << line.str();
}

template <typename... Args>
void debug(const Args&... args) {
  write(Level::Debug, "debug", args...);
}
template <typename... Args>
void info(const Args&... args) {
  write(Level::Info, "info", args...);
}
template <typename... Args>
void warn(const Args&... args) {
  write(Level::Warn, "warn", args...);
}

}  // namespace perfuseg::log
