//
// Copyright 2026 The TUL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef TUL_ERROR_HPP_
#define TUL_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace tul {

enum class ErrorKind {
  kShapeMismatch,
  kInvalidArgument,
  kValidation,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kIo,
  kNumeric,
  kStaleTape,
};

inline std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kBadMagic: return "bad magic";
    case ErrorKind::kVersionMismatch: return "version mismatch";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kStaleTape: return "stale tape";
  }
  return "unknown";
}

// Every failure raised by the library. `field` names the offending axis,
// config key or argument when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string field, const std::string& message)
      : std::runtime_error(std::string(ErrorKindName(kind)) +
                           (field.empty() ? "" : " [" + field + "]") + ": " +
                           message),
        kind_(kind),
        field_(std::move(field)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& field() const { return field_; }

 private:
  ErrorKind kind_;
  std::string field_;
};

[[noreturn]] inline void Fail(ErrorKind kind, std::string field,
                              const std::string& message) {
  throw Error(kind, std::move(field), message);
}

}  // namespace tul

#endif  // TUL_ERROR_HPP_
