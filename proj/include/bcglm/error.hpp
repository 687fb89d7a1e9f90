#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bcglm {

enum class Errc {
    ShapeMismatch,
    DimensionMismatch,
    NotPositiveDefinite,
    InvalidProbability,
    InvalidRate,
    InvalidArgument,
    DomainError,
    NonFiniteLoss,
    RankDeficient,
    Separation,
    NoConvergence,
    UnsupportedSmoothness,
    ConfigError,
    IoError,
    TooManyFailures,
};

inline std::string_view errc_name(Errc code) {
    switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::InvalidProbability: return "InvalidProbability";
    case Errc::InvalidRate: return "InvalidRate";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::DomainError: return "DomainError";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::Separation: return "Separation";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::UnsupportedSmoothness: return "UnsupportedSmoothness";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    case Errc::TooManyFailures: return "TooManyFailures";
    }
    return "Unknown";
}

// Every failure in the library is reported through this type; the code lets
// callers (the CLI in particular) map failures onto stable exit statuses.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& where, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + " in " + where + ": " + what),
          code_(code), where_(where) {}

    Errc code() const noexcept { return code_; }
    const std::string& where() const noexcept { return where_; }

private:
    Errc code_;
    std::string where_;
};

} // namespace bcglm
