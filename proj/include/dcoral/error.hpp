#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dcoral {

enum class ErrorKind {
    DegenerateBatch,
    NonFinite,
    DimensionMismatch,
    BadArchitecture,
    BadLabel,
    StaleForward,
    LengthMismatch,
    ProbeDiverged,
    BadSpec,
    ParseError,
    LabelOutOfRange,
    BatchTooLarge,
    BatchTooSmall,
    IoError,
    ConfigError,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

    ErrorKind kind() const noexcept { return kind_; }
    // what() without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

}  // namespace dcoral
