#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace diffsr {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value; `field()` names the offending setting.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Index or parameter outside its admissible range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// API misuse that is not a value-range problem (e.g. DDPM with a skipped step).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A computation that would produce a non-finite or degenerate value.
class NumericalError : public Error {
 public:
  NumericalError(int step, const std::string& message)
      : Error("step " + std::to_string(step) + ": " + message), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Failure inside a noise predictor. Carries the reverse step and, for the
/// subprocess bridge, the frame sequence number when known.
class DenoiserError : public Error {
 public:
  explicit DenoiserError(const std::string& message,
                         std::optional<unsigned> sequence = std::nullopt,
                         std::optional<int> step = std::nullopt)
      : Error(compose(message, sequence, step)),
        detail_(message),
        sequence_(sequence),
        step_(step) {}

  const std::string& detail() const noexcept { return detail_; }
  std::optional<unsigned> sequence() const noexcept { return sequence_; }
  std::optional<int> step() const noexcept { return step_; }

  DenoiserError with_step(int step) const { return DenoiserError(detail_, sequence_, step); }

 private:
  static std::string compose(const std::string& message, std::optional<unsigned> sequence,
                             std::optional<int> step) {
    std::string out = "denoiser";
    if (step) out += " at step " + std::to_string(*step);
    if (sequence) out += " (frame " + std::to_string(*sequence) + ")";
    return out + ": " + message;
  }

  std::string detail_;
  std::optional<unsigned> sequence_;
  std::optional<int> step_;
};

/// Malformed or inconsistent file content. `field()` names what failed.
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffsr
