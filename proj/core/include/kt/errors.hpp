#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kt {

/// Operand dimensions do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (bad sizes, rates outside (0,1], ...).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk data. Carries the byte offset at which parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Non-finite values where finite ones are required (e.g. NaN training loss).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Metric is undefined for the given inputs (e.g. AUROC with a single class).
class UndefinedMetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace kt
