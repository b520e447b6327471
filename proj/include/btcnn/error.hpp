#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace btcnn {

enum class ErrorCode {
    ShapeMismatch,
    OddDimension,
    TargetOutOfRange,
    MissingIndex,
    EmptyManifest,
    DuplicateRecordId,
    UnknownLabel,
    MissingFile,
    MalformedIndex,
    MalformedPgm,
    DimensionMismatch,
    InvalidMask,
    BadRatios,
    EmptyMask,
    OutOfBounds,
    NotDivisibleBy16,
    StaleCache,
    EmptyTrainSet,
    EmptyPartition,
    InvalidConfig,
    BadMagic,
    TruncatedPayload,
    VersionUnsupported,
    MalformedCheckpoint,
    MetadataMismatch,
    LengthMismatch,
    EmptyMatrix,
    UndefinedRate,
    DuplicateCell,
    IoError,
    InvalidFlag,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddDimension: return "OddDimension";
    case ErrorCode::TargetOutOfRange: return "TargetOutOfRange";
    case ErrorCode::MissingIndex: return "MissingIndex";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::DuplicateRecordId: return "DuplicateRecordId";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedIndex: return "MalformedIndex";
    case ErrorCode::MalformedPgm: return "MalformedPgm";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidMask: return "InvalidMask";
    case ErrorCode::BadRatios: return "BadRatios";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NotDivisibleBy16: return "NotDivisibleBy16";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::EmptyPartition: return "EmptyPartition";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::MalformedCheckpoint: return "MalformedCheckpoint";
    case ErrorCode::MetadataMismatch: return "MetadataMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::UndefinedRate: return "UndefinedRate";
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidFlag: return "InvalidFlag";
    }
    return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
/// what() is "<Code>: <detail>" so messages always name the failure kind.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace btcnn
