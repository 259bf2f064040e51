#pragma once

#include <stdexcept>
#include <string>

namespace pivo {

enum class ErrorKind {
  InvalidInput,
  NumericalFailure,
  Timestamp,
  InsufficientData,
  BehindCamera,
  DistortionInversion,
  LowParallax,
  DegenerateGeometry,
  Parse,
  Config,
  Stream,
  InsufficientSamples,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::NumericalFailure: return "numerical-failure";
    case ErrorKind::Timestamp: return "timestamp";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::BehindCamera: return "behind-camera";
    case ErrorKind::DistortionInversion: return "distortion-inversion";
    case ErrorKind::LowParallax: return "low-parallax";
    case ErrorKind::DegenerateGeometry: return "degenerate-geometry";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Config: return "config";
    case ErrorKind::Stream: return "stream";
    case ErrorKind::InsufficientSamples: return "insufficient-samples";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` tells callers how to react.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, double condition = 0.0)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        message_(what),
        condition_(condition) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& message() const noexcept { return message_; }
  /// Condition-number estimate, set for NumericalFailure / DegenerateGeometry.
  double condition() const noexcept { return condition_; }

 private:
  ErrorKind kind_;
  std::string message_;
  double condition_;
};

}  // namespace pivo
