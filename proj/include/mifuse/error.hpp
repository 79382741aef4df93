#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mifuse {

/// Broad failure class; the CLI maps each to an exit code.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Raised when a test-fold trial reaches a fitting stage.
class LeakageError : public DataError {
 public:
  explicit LeakageError(const std::string& what) : DataError("leakage guard: " + what) {}
};

/// Runs `fn`, prefixing any mifuse::Error with the stage name while keeping its kind.
template <typename Fn>
decltype(auto) with_stage(const std::string& stage, Fn&& fn) {
  try {
    return std::forward<Fn>(fn)();
  } catch (const LeakageError&) {
    throw;
  } catch (const Error& e) {
    const std::string msg = "[" + stage + "] " + e.what();
    switch (e.kind()) {
      case ErrorKind::config: throw ConfigError(msg);
      case ErrorKind::data: throw DataError(msg);
      case ErrorKind::numerical: throw NumericalError(msg);
    }
    throw;
  }
}

}  // namespace mifuse
