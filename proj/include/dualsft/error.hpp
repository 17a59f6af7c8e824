// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dualsft {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, arguments or input files. CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or numeric contract violations. CLI exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ConfigError(message);
}

} // namespace dualsft
