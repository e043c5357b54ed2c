#pragma once

#include <stdexcept>
#include <string>

namespace flowcrypt {

// Categories map one-to-one onto CLI exit codes (see tools/).
enum class ErrorKind {
  kInvalidArgument,
  kIo,
  kDegenerateData,
  kShapeMismatch,
  kCorruption,
  kValidation,
  kNumerical,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace flowcrypt
