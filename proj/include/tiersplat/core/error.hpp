#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tiersplat {

    enum class ErrorCode {
        DegenerateCovariance,
        NotNormalized,
        ZeroQuaternion,
        BehindCamera,
        EmptyInput,
        BadLevelCount,
        DegenerateRange,
        UnsortedContributions,
        NoTape,
        ShapeError,
        NaNGradient,
        EmptyAnchorLevel,
        MissingFrame,
        InitFailed,
        UnknownSpec,
        ParseError,
        IoError,
        BadConfig,
    };

    constexpr std::string_view to_string(ErrorCode code) {
        switch (code) {
        case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
        case ErrorCode::NotNormalized: return "NotNormalized";
        case ErrorCode::ZeroQuaternion: return "ZeroQuaternion";
        case ErrorCode::BehindCamera: return "BehindCamera";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::BadLevelCount: return "BadLevelCount";
        case ErrorCode::DegenerateRange: return "DegenerateRange";
        case ErrorCode::UnsortedContributions: return "UnsortedContributions";
        case ErrorCode::NoTape: return "NoTape";
        case ErrorCode::ShapeError: return "ShapeError";
        case ErrorCode::NaNGradient: return "NaNGradient";
        case ErrorCode::EmptyAnchorLevel: return "EmptyAnchorLevel";
        case ErrorCode::MissingFrame: return "MissingFrame";
        case ErrorCode::InitFailed: return "InitFailed";
        case ErrorCode::UnknownSpec: return "UnknownSpec";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::BadConfig: return "BadConfig";
        }
        return "Unknown";
    }

    /// Every failure raised by the library carries a machine-readable code.
    class Error : public std::runtime_error {
    public:
        Error(ErrorCode code, const std::string& what)
            : std::runtime_error(std::string(to_string(code)) + ": " + what),
              code_(code) {}

        ErrorCode code() const noexcept { return code_; }

    private:
        ErrorCode code_;
    };

} // namespace tiersplat
