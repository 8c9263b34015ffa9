#pragma once

#include <stdexcept>
#include <string>

namespace n2ntd {

// Error categories surfaced by the CLI as machine-parsable one-liners.
enum class Err {
    ConfigError,
    MalformedHeader,
    VersionMismatch,
    TruncatedPayload,
    ChecksumError,
    ConfigMismatch,
    InvalidArgument,
    DegeneratePosterior,
    NonFiniteLoss,
    GuardViolation,
    IoError,
};

inline const char* err_category(Err e)
{
    switch (e) {
    case Err::ConfigError:         return "config_error";
    case Err::MalformedHeader:     return "malformed_header";
    case Err::VersionMismatch:     return "version_mismatch";
    case Err::TruncatedPayload:    return "truncated_payload";
    case Err::ChecksumError:       return "checksum_error";
    case Err::ConfigMismatch:      return "config_mismatch";
    case Err::InvalidArgument:     return "invalid_argument";
    case Err::DegeneratePosterior: return "degenerate_posterior";
    case Err::NonFiniteLoss:       return "non_finite_loss";
    case Err::GuardViolation:      return "guard_violation";
    case Err::IoError:             return "io_error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    Err code() const { return code_; }
    const char* category() const { return err_category(code_); }

private:
    Err code_;
};

} // namespace n2ntd
