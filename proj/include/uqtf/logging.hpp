#pragma once

#include <string>

namespace uqtf::log {

enum class Level { error = 0, info = 1, debug = 2 };

// Level comes from UQGCN_LOG (error|info|debug), default info.
Level level();
void set_level(Level lvl);

void write(Level lvl, const std::string& msg);

inline void error(const std::string& msg) { write(Level::error, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void debug(const std::string& msg) { write(Level::debug, msg); }

}  // namespace uqtf::log
