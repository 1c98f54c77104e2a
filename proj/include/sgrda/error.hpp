#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace sgrda {

/// Bad arguments or violated preconditions at an API or command-line boundary.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data that cannot be used: undecodable images, wrong sizes, id mismatches.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical routine failed to produce a usable result.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Receives non-fatal diagnostics (degenerate inputs that were handled by a fallback).
/// Defaults to stderr; replace to capture or silence.
inline std::function<void(const std::string&)>& warning_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& msg) {
        std::cerr << "warning: " << msg << '\n';
    };
    return sink;
}

inline void warn(const std::string& msg) {
    if (auto& sink = warning_sink()) sink(msg);
}

namespace detail {

[[noreturn]] inline void usage_fail(const std::string& what) { throw UsageError(what); }

}  // namespace detail

}  // namespace sgrda
