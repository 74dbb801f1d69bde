#include "disco/error.hpp"

namespace disco {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDepthExceeded: return "DepthExceeded";
    case ErrorCode::kLevelExhausted: return "LevelExhausted";
    case ErrorCode::kUnknownPath: return "UnknownPath";
    case ErrorCode::kInvalidPath: return "InvalidPath";
    case ErrorCode::kTruncated: return "Truncated";
    case ErrorCode::kUnknownTypeTag: return "UnknownTypeTag";
    case ErrorCode::kTemplateMismatch: return "TemplateMismatch";
    case ErrorCode::kUnknownComponent: return "UnknownComponent";
    case ErrorCode::kMissingAttribute: return "MissingAttribute";
    case ErrorCode::kTypeMismatch: return "TypeMismatch";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kSchedulePast: return "SchedulePast";
    case ErrorCode::kUnknownNode: return "UnknownNode";
    case ErrorCode::kUnknownTemplate: return "UnknownTemplate";
    case ErrorCode::kProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

}  // namespace disco
