#include "memscry/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <string_view>

namespace memscry::logging {

namespace {

Level parse_level(const char* value) {
    if (!value) return Level::warn;
    std::string_view v(value);
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    if (v == "trace") return Level::trace;
    return Level::warn;
}

const char* level_name(Level level) {
    switch (level) {
        case Level::error: return "error";
        case Level::warn: return "warn";
        case Level::info: return "info";
        case Level::debug: return "debug";
        case Level::trace: return "trace";
    }
    return "?";
}

}  // namespace

Level threshold() {
    static const Level cached = parse_level(std::getenv("MEMSCRY_LOG"));
    return cached;
}

bool enabled(Level level) {
    return static_cast<int>(level) <= static_cast<int>(threshold());
}

void write(Level level, const std::string& msg) {
    std::fprintf(stderr, "memscry [%s] %s\n", level_name(level), msg.c_str());
}

}  // namespace memscry::logging
