#include "dcoral/error.hpp"

namespace dcoral {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::DegenerateBatch: return "DegenerateBatch";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::BadArchitecture: return "BadArchitecture";
        case ErrorKind::BadLabel: return "BadLabel";
        case ErrorKind::StaleForward: return "StaleForward";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::ProbeDiverged: return "ProbeDiverged";
        case ErrorKind::BadSpec: return "BadSpec";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorKind::BatchTooLarge: return "BatchTooLarge";
        case ErrorKind::BatchTooSmall: return "BatchTooSmall";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

}  // namespace dcoral
