#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace n2ntd::log {

// Tiny logging facade: the CLI swaps the sink for --quiet, tests swap it to
// capture warnings. Informational lines go through info(), recoverable
// oddities through warn().

inline std::function<void(const std::string&)>& info_sink()
{
    static std::function<void(const std::string&)> fn =
        [](const std::string& m) { std::cout << m << "\n"; };
    return fn;
}

inline std::function<void(const std::string&)>& warn_sink()
{
    static std::function<void(const std::string&)> fn =
        [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
    return fn;
}

inline void info(const std::string& m) { info_sink()(m); }
inline void warn(const std::string& m) { warn_sink()(m); }

inline void set_quiet(bool quiet)
{
    if (quiet)
        info_sink() = [](const std::string&) {};
    else
        info_sink() = [](const std::string& m) { std::cout << m << "\n"; };
}

} // namespace n2ntd::log
