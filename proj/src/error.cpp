#include "tmf/error.hpp"

namespace tmf {

std::string_view category_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Parameter: return "parameter";
    case ErrorCode::Geometry: return "geometry";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Format: return "format";
    case ErrorCode::ConfigMismatch: return "config-mismatch";
    case ErrorCode::Manifest: return "manifest";
    case ErrorCode::Contract: return "contract";
    case ErrorCode::Io: return "io";
    case ErrorCode::InputNotFound: return "input-not-found";
    case ErrorCode::DegenerateInput: return "degenerate-input";
    case ErrorCode::Internal: return "internal";
  }
  return "internal";
}

}  // namespace tmf
