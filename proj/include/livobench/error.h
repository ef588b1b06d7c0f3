#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace livobench {

enum class ErrorCode {
  kBehindCamera,
  kNonPositiveDepth,
  kTooManyLevels,
  kOutOfBounds,
  kWarpOutOfBounds,
  kDegenerateGeometry,
  kUnknownKind,
  kFormatError,
  kMissingStream,
  kInvalidDt,
  kTooCloseToBorder,
  kKindMismatch,
  kProtocolError,
  kPluginTimeout,
  kPluginCrashed,
  kNoValidPatches,
  kTooFewCorrespondences,
  kNoOverlap,
  kMissingStage,
  kIoError,
  kDatasetError,
  kConfigError,
  kInvalidArgument,
};

std::string_view ErrorCodeName(ErrorCode code);

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

  bool IsPluginError() const {
    return code_ == ErrorCode::kProtocolError ||
           code_ == ErrorCode::kPluginTimeout ||
           code_ == ErrorCode::kPluginCrashed;
  }

 private:
  ErrorCode code_;
};

}  // namespace livobench
