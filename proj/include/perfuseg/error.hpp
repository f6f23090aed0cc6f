#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace perfuseg {

/// Failure categories raised across the pipeline. The CLI maps each kind onto
/// an exit code through exit_code().
enum class ErrorKind {
  Config,                  // bad parameter or configuration value
  Alignment,               // spatial dimensions disagree
  LabelEncoding,           // grayscale outside {0, 76, 150, 255}
  Format,                  // malformed file
  IncompleteFile,          // file ends before a required element
  Unsupported,             // recognised but unsupported feature
  InconsistentAcquisition, // ragged or mixed DICOM series
  Duplicate,               // duplicate (slice, time) frame
  SkullStrip,              // no brain found in a slice
  Shape,                   // tensor shape mismatch
  Usage,                   // API or CLI misuse
  ModelConstruction,       // layer chain cannot be resolved
  Load,                    // checkpoint does not match the model
  UndefinedMetric,         // zero denominator / empty evaluation set
  Evaluation,              // rule references an unavailable map
  Validation,              // generic input validation
  Io,                      // filesystem failure
  Divergence,              // NaN / Inf during training
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// 0 success, 1 validation, 2 I/O, 3 numeric divergence.
int exit_code(ErrorKind kind);

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace perfuseg
