#include "metapn/error.h"

namespace metapn {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kOutOfRange: return "index out of range";
    case ErrorCode::kMissingFile: return "missing file";
    case ErrorCode::kFeaturePayloadSize: return "feature payload size";
    case ErrorCode::kLabelOutOfRange: return "label out of range";
    case ErrorCode::kMalformedInput: return "malformed input";
    case ErrorCode::kClassTooSmall: return "class too small";
    case ErrorCode::kEmptyPool: return "empty unlabeled pool";
    case ErrorCode::kUnreachableNode: return "unreachable node";
    case ErrorCode::kStaleCache: return "stale cache";
    case ErrorCode::kEmptyClass: return "empty class";
    case ErrorCode::kIo: return "io error";
  }
  return "unknown error";
}

}  // namespace metapn
