#pragma once

#include <stdexcept>
#include <string>

namespace mstm {

// Exit codes used by the command-line front end.
enum class ExitCode : int {
  ok = 0,
  usage = 1,
  missing_input = 2,
  validation = 3,
  state = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// A referenced file or directory does not exist or cannot be opened.
class MissingInputError : public Error {
 public:
  explicit MissingInputError(const std::string& what)
      : Error(ExitCode::missing_input, what) {}
};

// Input content violates a documented precondition.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ExitCode::validation, what) {}
};

// Sampler state or stored chain is unusable (non-finite draws, corrupt chain).
class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(ExitCode::state, what) {}
};

}  // namespace mstm
