#pragma once

#include <stdexcept>
#include <string>

namespace onering {

/// Category of a library failure. The CLI maps these onto exit codes.
enum class ErrorKind {
  InvalidShape,
  InvalidLabel,
  InvalidBackward,
  InvalidConfig,
  IndexOutOfRange,
  Parse,
  Metric,
  Generation,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::InvalidLabel: return "invalid-label";
    case ErrorKind::InvalidBackward: return "invalid-backward";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::IndexOutOfRange: return "index-out-of-range";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Metric: return "metric";
    case ErrorKind::Generation: return "generation";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace onering
