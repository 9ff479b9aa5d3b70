#pragma once

#include <stdexcept>
#include <string>

namespace harope {

// Mismatched matrix/vector dimensions.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Value outside the mathematical domain of an operation.
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Inconsistent configuration (variant/field combinations, bad run configs).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unparseable file contents; carries the byte offset of the first bad token.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Non-finite values encountered mid-computation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged; carries the optimizer step where it happened.
struct TrainingError : std::runtime_error {
    TrainingError(const std::string& msg, std::size_t at_step)
        : std::runtime_error(msg + " (step " + std::to_string(at_step) + ")"), step(at_step) {}
    std::size_t step;
};

}  // namespace harope
