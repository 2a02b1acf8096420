#pragma once

#include <stdexcept>
#include <string>

namespace dehaze {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised when a loss or gradient becomes non-finite during optimization.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, int epoch, int step)
      : Error(what), epoch_(epoch), step_(step) {}
  int epoch() const noexcept { return epoch_; }
  int step() const noexcept { return step_; }

 private:
  int epoch_;
  int step_;
};

class DigestMismatch : public Error {
 public:
  using Error::Error;
};

class NetworkError : public Error {
 public:
  using Error::Error;
};

}  // namespace dehaze
