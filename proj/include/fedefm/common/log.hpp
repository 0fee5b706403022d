#pragma once

#include <sstream>
#include <string>

namespace fedefm::log {

enum class Level { debug = 0, info = 1, warn = 2, quiet = 3 };

/// Threshold read once from FEDEFM_LOG (debug|info|warn|quiet, default info).
Level threshold();
void write(Level level, const std::string& message);

template <class... Args>
void info(const Args&... args) {
  if (threshold() > Level::info) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::info, os.str());
}

template <class... Args>
void warn(const Args&... args) {
  if (threshold() > Level::warn) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::warn, os.str());
}

template <class... Args>
void debug(const Args&... args) {
  if (threshold() > Level::debug) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::debug, os.str());
}

}  // namespace fedefm::log
