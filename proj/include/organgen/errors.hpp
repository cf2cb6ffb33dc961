#pragma once

#include <stdexcept>
#include <string>

namespace organgen {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError  -> 2, DataError -> 3, NumericError -> 4,
//   anything else -> 5 (internal).

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace organgen
