#pragma once

#include <stdexcept>
#include <string>

namespace ntrflab {

// Failure categories map onto the CLI exit codes (2, 3, 4).
enum class ErrorKind { InvalidInput, Budget, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error(ErrorKind::InvalidInput, what) {}
};

// Rejection samplers or searches that ran out of attempts.
class BudgetExceeded : public Error {
 public:
  explicit BudgetExceeded(const std::string& what) : Error(ErrorKind::Budget, what) {}
};

// Non-finite or exploding iterates. `last_valid_step` is the last iterate
// whose loss and weights were finite.
class Divergence : public Error {
 public:
  Divergence(const std::string& what, long last_valid_step)
      : Error(ErrorKind::Budget, what), last_valid_step_(last_valid_step) {}
  long last_valid_step() const noexcept { return last_valid_step_; }

 private:
  long last_valid_step_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return 2;
    case ErrorKind::Budget: return 3;
    case ErrorKind::Io: return 4;
  }
  return 1;
}

}  // namespace ntrflab
