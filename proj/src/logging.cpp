#include "uqtf/logging.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace uqtf::log {

namespace {
Level parse_env() {
    const char* env = std::getenv("UQGCN_LOG");
    if (!env) return Level::info;
    if (std::strcmp(env, "error") == 0) return Level::error;
    if (std::strcmp(env, "debug") == 0) return Level::debug;
    return Level::info;
}

Level& current() {
    static Level lvl = parse_env();
    return lvl;
}
}  // namespace

Level level() { return current(); }

void set_level(Level lvl) { current() = lvl; }

void write(Level lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(current())) return;
    const char* tag = lvl == Level::error ? "error" : (lvl == Level::info ? "info" : "debug");
    std::fprintf(stderr, "[uqtf %s] %s\n", tag, msg.c_str());
}

}  // namespace uqtf::log
