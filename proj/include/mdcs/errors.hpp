#pragma once

#include <stdexcept>
#include <string>

namespace mdcs {

/// Invalid configuration, file, or argument. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values or other numeric breakdown. CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mdcs
