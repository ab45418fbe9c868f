#pragma once

#include <stdexcept>
#include <string>

namespace aas {

enum class ErrorKind {
  Invalid,     // bad argument, shape mismatch, violated precondition
  Config,      // configuration parse or constraint failure
  Training,    // diverged or otherwise aborted training run
  Io,          // filesystem or format failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(ErrorKind::Invalid, what); }
[[noreturn]] inline void config_error(const std::string& what) { throw Error(ErrorKind::Config, what); }
[[noreturn]] inline void training_abort(const std::string& what) { throw Error(ErrorKind::Training, what); }
[[noreturn]] inline void io_error(const std::string& what) { throw Error(ErrorKind::Io, what); }

}  // namespace aas
