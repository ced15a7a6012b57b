#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>

namespace prunebench::log {

enum class level { debug, info, warn, error, quiet };

inline std::atomic<level>& threshold() {
    static std::atomic<level> t{level::warn};
    return t;
}

inline void write(level lv, const std::string& msg) {
    if (lv < threshold().load()) return;
    static std::mutex m;
    static constexpr const char* tags[] = {"debug", "info", "warn", "error"};
    std::lock_guard lock(m);
    std::cerr << "[prunebench:" << tags[static_cast<int>(lv)] << "] " << msg << '\n';
}

inline void info(const std::string& msg) { write(level::info, msg); }
inline void warn(const std::string& msg) { write(level::warn, msg); }

}  // namespace prunebench::log
