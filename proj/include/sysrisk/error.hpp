#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace sysrisk {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// Malformed configuration; `key()` names the offending key (empty for syntax errors).
class ParseError : public Error {
public:
  ParseError(std::string key, const std::string& what)
      : Error(key.empty() ? what : "config key '" + key + "': " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

private:
  std::string key_;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

/// State became non-finite during time stepping.
class DivergenceError : public Error {
public:
  DivergenceError(std::size_t step, double time, const std::string& what)
      : Error(what + " (step " + std::to_string(step) + ", t=" + std::to_string(time) + ")"),
        step_(step), time_(time) {}

  std::size_t step() const noexcept { return step_; }
  double time() const noexcept { return time_; }

private:
  std::size_t step_;
  double time_;
};

class BracketError : public Error {
public:
  using Error::Error;
};

class DegenerateSpectrumError : public Error {
public:
  using Error::Error;
};

class InstabilityError : public Error {
public:
  using Error::Error;
};

} // namespace sysrisk
