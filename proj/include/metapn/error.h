#pragma once

#include <stdexcept>
#include <string>

namespace metapn {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kOutOfRange,
  kMissingFile,
  kFeaturePayloadSize,
  kLabelOutOfRange,
  kMalformedInput,
  kClassTooSmall,
  kEmptyPool,
  kUnreachableNode,
  kStaleCache,
  kEmptyClass,
  kIo,
};

const char* to_string(ErrorCode code);

// Every library failure surfaces as this exception; `code()` lets callers and
// tests distinguish failure kinds without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace metapn
