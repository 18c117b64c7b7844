#include "pestnet/error.hpp"

namespace pestnet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnreadableRoot: return "UnreadableRoot";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DecodeFailure: return "DecodeFailure";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InputTooSmall: return "InputTooSmall";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::MemberMismatch: return "MemberMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LabelSpaceMismatch: return "LabelSpaceMismatch";
    case ErrorCode::UnsupportedLayer: return "UnsupportedLayer";
    case ErrorCode::WriteFailure: return "WriteFailure";
    case ErrorCode::EmptyLedger: return "EmptyLedger";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, std::string operation, const std::string& detail)
    : std::runtime_error(operation + ": " + std::string(to_string(code)) +
                         (detail.empty() ? "" : ": " + detail)),
      code_(code),
      operation_(std::move(operation)) {}

}  // namespace pestnet
