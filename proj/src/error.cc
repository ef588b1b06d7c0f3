#include "livobench/error.h"

namespace livobench {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kTooManyLevels: return "TooManyLevels";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kWarpOutOfBounds: return "WarpOutOfBounds";
    case ErrorCode::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::kUnknownKind: return "UnknownKind";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kMissingStream: return "MissingStream";
    case ErrorCode::kInvalidDt: return "InvalidDt";
    case ErrorCode::kTooCloseToBorder: return "TooCloseToBorder";
    case ErrorCode::kKindMismatch: return "KindMismatch";
    case ErrorCode::kProtocolError: return "ProtocolError";
    case ErrorCode::kPluginTimeout: return "PluginTimeout";
    case ErrorCode::kPluginCrashed: return "PluginCrashed";
    case ErrorCode::kNoValidPatches: return "NoValidPatches";
    case ErrorCode::kTooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::kNoOverlap: return "NoOverlap";
    case ErrorCode::kMissingStage: return "MissingStage";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kDatasetError: return "DatasetError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace livobench
