#pragma once

#include <string>

namespace memscry::logging {

enum class Level { error = 0, warn = 1, info = 2, debug = 3, trace = 4 };

// Threshold comes from MEMSCRY_LOG (error|warn|info|debug|trace), default warn.
Level threshold();
bool enabled(Level level);
void write(Level level, const std::string& msg);

}  // namespace memscry::logging

#define MEMSCRY_LOG(level, msg)                                          \
    do {                                                                 \
        if (::memscry::logging::enabled(level))                          \
            ::memscry::logging::write(level, (msg));                     \
    } while (0)
