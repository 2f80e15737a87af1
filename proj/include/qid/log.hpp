#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace qid {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Quiet = 3 };

inline LogLevel log_level_from_env() {
  const char* env = std::getenv("QID_LOG");
  if (env == nullptr) return LogLevel::Info;
  const std::string v(env);
  if (v == "debug") return LogLevel::Debug;
  if (v == "info") return LogLevel::Info;
  if (v == "warn") return LogLevel::Warn;
  if (v == "quiet") return LogLevel::Quiet;
  return LogLevel::Info;
}

inline LogLevel& log_level() {
  static LogLevel level = log_level_from_env();
  return level;
}

inline void log_at(LogLevel lvl, const std::string& msg) {
  if (static_cast<int>(lvl) < static_cast<int>(log_level())) return;
  std::cerr << "[qid] " << msg << std::endl;
}

inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, msg); }
inline void log_warn(const std::string& msg) { log_at(LogLevel::Warn, msg); }

}  // namespace qid
