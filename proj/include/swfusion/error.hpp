#ifndef SWFUSION_ERROR_HPP
#define SWFUSION_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace swfusion {

enum class ErrorKind {
  kSingularBlock,
  kSingularSystem,
  kDimensionMismatch,
  kNotVisible,
  kNotConverged,
  kMissingAnchor,
  kFrameMismatch,
  kDegenerateWorld,
  kParseError,
  kValidationError,
  kConfigError,
  kIoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kSingularBlock: return "SingularBlock";
    case ErrorKind::kSingularSystem: return "SingularSystem";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kNotVisible: return "NotVisible";
    case ErrorKind::kNotConverged: return "NotConverged";
    case ErrorKind::kMissingAnchor: return "MissingAnchor";
    case ErrorKind::kFrameMismatch: return "FrameMismatch";
    case ErrorKind::kDegenerateWorld: return "DegenerateWorld";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kValidationError: return "ValidationError";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kIoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind), detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

/// Parse failure with the 1-based location of the offending token.
class ParseError : public Error {
 public:
  ParseError(int line, int column, const std::string& message)
      : Error(ErrorKind::kParseError,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                  message),
        line_(line), column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace swfusion

#endif  // SWFUSION_ERROR_HPP
