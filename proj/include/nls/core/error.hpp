#pragma once

#include <stdexcept>
#include <string>

namespace nls {

enum class ErrorKind {
  kDimension,
  kShape,
  kFormat,
  kValidation,
  kParameter,
  kConsistency,
  kConfiguration,
  kUnavailableFeature,
  kDomain,
  kIo,
  kResolution,
  kProbeQuality,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kConsistency: return "consistency error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kUnavailableFeature: return "unavailable feature";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kResolution: return "resolution error";
    case ErrorKind::kProbeQuality: return "probe quality error";
  }
  return "error";
}

/// Base class for every error raised by the library. The kind drives CLI exit
/// codes; the concrete subclasses exist so callers can catch narrowly.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class KindError : public Error {
 public:
  explicit KindError(const std::string& message) : Error(K, message) {}
};

using DimensionError = KindError<ErrorKind::kDimension>;
using ShapeError = KindError<ErrorKind::kShape>;
using FormatError = KindError<ErrorKind::kFormat>;
using ValidationError = KindError<ErrorKind::kValidation>;
using ParameterError = KindError<ErrorKind::kParameter>;
using ConsistencyError = KindError<ErrorKind::kConsistency>;
using ConfigurationError = KindError<ErrorKind::kConfiguration>;
using UnavailableFeatureError = KindError<ErrorKind::kUnavailableFeature>;
using DomainError = KindError<ErrorKind::kDomain>;
using IoError = KindError<ErrorKind::kIo>;
using ResolutionError = KindError<ErrorKind::kResolution>;
using ProbeQualityError = KindError<ErrorKind::kProbeQuality>;

}  // namespace nls
