#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pestnet {

enum class ErrorCode {
  EmptyDataset,
  UnreadableRoot,
  ClassTooSmall,
  MalformedLine,
  LabelOutOfRange,
  DecodeFailure,
  ImageTooSmall,
  ShapeMismatch,
  InputTooSmall,
  WindowTooLarge,
  LengthMismatch,
  EmptyClass,
  MemberMismatch,
  NonFiniteLoss,
  LabelSpaceMismatch,
  UnsupportedLayer,
  WriteFailure,
  EmptyLedger,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every module reports failures through this type. The message always
/// starts with the failing operation so CLI output is self-describing.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string operation, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& operation() const noexcept { return operation_; }

 private:
  ErrorCode code_;
  std::string operation_;
};

}  // namespace pestnet
