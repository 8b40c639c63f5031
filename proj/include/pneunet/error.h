#ifndef PNEUNET_ERROR_H_
#define PNEUNET_ERROR_H_

#include <stdexcept>
#include <string>

namespace pneunet {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or layer geometry that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Numeric domain violations (log of a non-positive value, non-finite input).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or caller arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, unreadable or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (images, checkpoints, reports).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public FormatError {
 public:
  enum class Kind { kBadMagic, kVersion, kHeader, kTruncated };

  CheckpointError(Kind kind, const std::string& what)
      : FormatError(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace pneunet

#endif  // PNEUNET_ERROR_H_
